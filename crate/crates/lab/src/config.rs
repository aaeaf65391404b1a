//! Line-oriented experiment configuration.
//!
//! ```text
//! [experiment]
//! name = kl-order-sweep
//! [potential]
//! kind = isotropic
//! dim = 2
//! [grid]
//! t = 0.5
//! h = 1/8, 1/16, 1/32, 1/64
//! [scheme]
//! name = M-LMC
//! [run]
//! seed = 7
//! ```
//!
//! `#` starts a comment. Unknown sections or keys and repeated keys are errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use midpoint_core::grid::MidpointSchedule;
use midpoint_core::local_error::StartLaw;
use midpoint_core::potential::PotentialModel;
use midpoint_core::scheme::{Scheme, SchemeSpec};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};

pub const CSV_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Normalization,
    AdaptedEquivalence,
    FdMalliavin,
    EtaRefinement,
    KlOrderSweep,
    LocalErrorSweep,
    TraceDiagnostics,
    ComplexityTable,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Normalization,
        ExperimentKind::AdaptedEquivalence,
        ExperimentKind::FdMalliavin,
        ExperimentKind::EtaRefinement,
        ExperimentKind::KlOrderSweep,
        ExperimentKind::LocalErrorSweep,
        ExperimentKind::TraceDiagnostics,
        ExperimentKind::ComplexityTable,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            ExperimentKind::Normalization => "normalization",
            ExperimentKind::AdaptedEquivalence => "adapted-equivalence",
            ExperimentKind::FdMalliavin => "fd-malliavin",
            ExperimentKind::EtaRefinement => "eta-refinement",
            ExperimentKind::KlOrderSweep => "kl-order-sweep",
            ExperimentKind::LocalErrorSweep => "local-error-sweep",
            ExperimentKind::TraceDiagnostics => "trace-diagnostics",
            ExperimentKind::ComplexityTable => "complexity-table",
        }
    }

    /// Experiments that evaluate change-of-measure weights, and therefore
    /// need the step-size bounds.
    fn uses_weights(&self) -> bool {
        matches!(
            self,
            ExperimentKind::Normalization
                | ExperimentKind::EtaRefinement
                | ExperimentKind::KlOrderSweep
                | ExperimentKind::TraceDiagnostics
        )
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| format!("unknown experiment '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSpec {
    Isotropic { dim: usize, scale: f64 },
    Anisotropic { spectrum: Vec<f64> },
    Perturbed { spectrum: Vec<f64>, amplitude: f64, frequency: f64 },
    Product { dim: usize, curvature: f64, bump: f64 },
}

impl PotentialSpec {
    pub fn build(&self, tilt: Option<&[f64]>) -> Result<PotentialModel> {
        let v = match self {
            PotentialSpec::Isotropic { dim, scale } => PotentialModel::isotropic(*dim, *scale)?,
            PotentialSpec::Anisotropic { spectrum } => PotentialModel::anisotropic(spectrum.clone())?,
            PotentialSpec::Perturbed {
                spectrum,
                amplitude,
                frequency,
            } => PotentialModel::perturbed(spectrum.clone(), *amplitude, *frequency)?,
            PotentialSpec::Product {
                dim,
                curvature,
                bump,
            } => PotentialModel::product(*dim, *curvature, *bump)?,
        };
        Ok(match tilt {
            Some(t) => v.with_tilt(t.to_vec())?,
            None => v,
        })
    }

    /// Same family in twice the dimension (spectra repeated).
    pub fn doubled(&self) -> Self {
        let twice = |s: &Vec<f64>| s.iter().chain(s.iter()).cloned().collect::<Vec<_>>();
        match self {
            PotentialSpec::Isotropic { dim, scale } => PotentialSpec::Isotropic {
                dim: 2 * dim,
                scale: *scale,
            },
            PotentialSpec::Anisotropic { spectrum } => PotentialSpec::Anisotropic {
                spectrum: twice(spectrum),
            },
            PotentialSpec::Perturbed {
                spectrum,
                amplitude,
                frequency,
            } => PotentialSpec::Perturbed {
                spectrum: twice(spectrum),
                amplitude: *amplitude,
                frequency: *frequency,
            },
            PotentialSpec::Product {
                dim,
                curvature,
                bump,
            } => PotentialSpec::Product {
                dim: 2 * dim,
                curvature: *curvature,
                bump: *bump,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleMode {
    Deterministic,
    Randomized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StartSpec {
    /// `N(mean, sd^2)` independently in every coordinate of the state.
    Gaussian { mean: f64, sd: f64 },
    Stationary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub potential: PotentialSpec,
    pub tilt: Option<Vec<f64>>,
    pub t_final: Option<f64>,
    pub hs: Vec<f64>,
    /// Inner cells per step: one value, or one per scheme.
    pub m: Vec<usize>,
    pub schemes: Vec<Scheme>,
    pub schedule: ScheduleMode,
    pub fraction: f64,
    pub gamma: f64,
    pub q: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub threads: usize,
    pub output: Option<PathBuf>,
    pub start: StartSpec,
    pub doublings: usize,
    pub m_sweep: Vec<usize>,
    pub eps: Vec<f64>,
    pub probe: f64,
}

const KEYS: &[(&str, &[&str])] = &[
    ("experiment", &["name", "doublings", "m_sweep", "eps", "probe"]),
    (
        "potential",
        &["kind", "dim", "scale", "spectrum", "amplitude", "frequency", "curvature", "bump", "tilt"],
    ),
    ("grid", &["t", "n", "h", "m"]),
    ("scheme", &["name", "schedule", "fraction", "gamma"]),
    (
        "run",
        &["q", "n_paths", "seed", "threads", "output", "start", "start_mean", "start_sd"],
    ),
];

struct Entry {
    value: String,
    line: usize,
}

struct Raw {
    map: BTreeMap<String, Entry>,
}

impl Raw {
    fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, Entry> = BTreeMap::new();
        let mut section: Option<&str> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.split('#').next().unwrap_or("").trim();
            if s.is_empty() {
                continue;
            }
            if let Some(name) = s.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| parse_err(line, "unterminated section header"))?
                    .trim();
                let known = KEYS
                    .iter()
                    .find(|(sec, _)| *sec == name)
                    .ok_or_else(|| parse_err(line, format!("unknown section [{name}]")))?;
                section = Some(known.0);
                continue;
            }
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| parse_err(line, "expected key = value"))?;
            let (k, v) = (k.trim(), v.trim());
            let sec = section.ok_or_else(|| parse_err(line, format!("key '{k}' outside any section")))?;
            let allowed = KEYS.iter().find(|(s, _)| *s == sec).unwrap().1;
            if !allowed.contains(&k) {
                return Err(parse_err(line, format!("unknown key '{k}' in [{sec}]")));
            }
            if v.is_empty() {
                return Err(parse_err(line, format!("empty value for '{k}'")));
            }
            let full = format!("{sec}.{k}");
            if let Some(prev) = map.get(&full) {
                return Err(parse_err(
                    line,
                    format!("duplicate key '{full}' (first set on line {})", prev.line),
                ));
            }
            map.insert(
                full,
                Entry {
                    value: v.to_string(),
                    line,
                },
            );
        }
        Ok(Self { map })
    }

    fn get(&self, key: &str) -> Option<&Entry> {
        self.map.get(key)
    }

    fn req(&self, key: &str) -> Result<&Entry> {
        self.get(key).ok_or_else(|| LabError::Missing(key.into()))
    }

    fn float(&self, key: &str) -> Result<Option<f64>> {
        self.get(key).map(|e| number(&e.value, e.line)).transpose()
    }

    fn floats(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|e| e.value.split(',').map(|s| number(s, e.line)).collect())
            .transpose()
    }

    fn int(&self, key: &str) -> Result<Option<usize>> {
        self.get(key).map(|e| integer(&e.value, e.line)).transpose()
    }

    fn ints(&self, key: &str) -> Result<Option<Vec<usize>>> {
        self.get(key)
            .map(|e| e.value.split(',').map(|s| integer(s, e.line)).collect())
            .transpose()
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> LabError {
    LabError::Parse {
        line,
        msg: msg.into(),
    }
}

/// Decimal, scientific, or `a/b`.
fn number(s: &str, line: usize) -> Result<f64> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| parse_err(line, format!("malformed number '{s}'")))?;
            let b: f64 = b.trim().parse().map_err(|_| parse_err(line, format!("malformed number '{s}'")))?;
            a / b
        }
        None => s
            .parse()
            .map_err(|_| parse_err(line, format!("malformed number '{s}'")))?,
    };
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite number '{s}'")));
    }
    Ok(v)
}

/// Integers may be written as `100000` or `1e5`.
fn integer(s: &str, line: usize) -> Result<usize> {
    let v = number(s, line)?;
    if v < 0.0 || v.fract() != 0.0 || v > u64::MAX as f64 {
        return Err(parse_err(line, format!("expected a non-negative integer, got '{}'", s.trim())));
    }
    Ok(v as usize)
}

fn parse_with<T: FromStr>(e: &Entry) -> Result<T>
where
    T::Err: fmt::Display,
{
    e.value.parse().map_err(|err: T::Err| parse_err(e.line, err.to_string()))
}

pub fn load_config(text: &str) -> Result<ExperimentConfig> {
    let raw = Raw::parse(text)?;
    let experiment: ExperimentKind = parse_with(raw.req("experiment.name")?)?;

    let kind = raw.req("potential.kind")?;
    let dim = raw.int("potential.dim")?;
    let spectrum = raw.floats("potential.spectrum")?;
    let need_dim = || dim.ok_or_else(|| LabError::Missing("potential.dim".into()));
    let need_spectrum = || {
        let s = spectrum.clone().ok_or_else(|| LabError::Missing("potential.spectrum".into()))?;
        if let Some(d) = dim {
            if d != s.len() {
                return Err(LabError::Invalid(format!(
                    "potential.dim = {d} but spectrum has {} entries",
                    s.len()
                )));
            }
        }
        Ok(s)
    };
    let potential = match kind.value.as_str() {
        "isotropic" | "gaussian" => PotentialSpec::Isotropic {
            dim: need_dim()?,
            scale: raw.float("potential.scale")?.unwrap_or(1.0),
        },
        "anisotropic" => PotentialSpec::Anisotropic {
            spectrum: need_spectrum()?,
        },
        "perturbed" => PotentialSpec::Perturbed {
            spectrum: need_spectrum()?,
            amplitude: raw.float("potential.amplitude")?.unwrap_or(0.1),
            frequency: raw.float("potential.frequency")?.unwrap_or(1.0),
        },
        "product" => PotentialSpec::Product {
            dim: need_dim()?,
            curvature: raw.float("potential.curvature")?.unwrap_or(1.0),
            bump: raw.float("potential.bump")?.unwrap_or(0.5),
        },
        other => return Err(parse_err(kind.line, format!("unknown potential kind '{other}'"))),
    };
    let tilt = raw.floats("potential.tilt")?;

    let t_final = raw.float("grid.t")?;
    let ns = raw.ints("grid.n")?;
    let hs = raw.floats("grid.h")?;
    let hs = match (ns, hs) {
        (Some(_), Some(_)) => {
            return Err(LabError::Invalid("give either grid.n or grid.h, not both".into()))
        }
        (Some(ns), None) => {
            let t = t_final.ok_or_else(|| LabError::Missing("grid.t".into()))?;
            if ns.contains(&0) {
                return Err(LabError::Invalid("grid.n must be positive".into()));
            }
            ns.iter().map(|n| t / *n as f64).collect()
        }
        (None, Some(hs)) => hs,
        (None, None) => Vec::new(),
    };
    let schemes: Vec<Scheme> = {
        let e = raw.req("scheme.name")?;
        e.value
            .split(',')
            .map(|s| s.trim().parse().map_err(|err: midpoint_core::Error| parse_err(e.line, err.to_string())))
            .collect::<Result<_>>()?
    };
    let schedule = match raw.get("scheme.schedule") {
        None => ScheduleMode::Deterministic,
        Some(e) => match e.value.as_str() {
            "deterministic" => ScheduleMode::Deterministic,
            "randomized" => ScheduleMode::Randomized,
            other => return Err(parse_err(e.line, format!("unknown schedule '{other}'"))),
        },
    };
    let start = match raw.get("run.start").map(|e| (e.value.as_str(), e.line)) {
        None | Some(("gaussian", _)) => StartSpec::Gaussian {
            mean: raw.float("run.start_mean")?.unwrap_or(1.0),
            sd: raw.float("run.start_sd")?.unwrap_or(0.5),
        },
        Some(("stationary", _)) => StartSpec::Stationary,
        Some((other, line)) => return Err(parse_err(line, format!("unknown start law '{other}'"))),
    };

    let cfg = ExperimentConfig {
        experiment,
        potential,
        tilt,
        t_final,
        hs,
        m: raw.ints("grid.m")?.unwrap_or_else(|| vec![8]),
        schemes,
        schedule,
        fraction: raw.float("scheme.fraction")?.unwrap_or(0.5),
        gamma: raw.float("scheme.gamma")?.unwrap_or(1.0),
        q: raw.floats("run.q")?.unwrap_or_else(|| vec![2.0]),
        n_paths: raw.int("run.n_paths")?.unwrap_or(100_000),
        seed: raw.int("run.seed")?.unwrap_or(0) as u64,
        threads: raw.int("run.threads")?.unwrap_or(1),
        output: raw.get("run.output").map(|e| PathBuf::from(&e.value)),
        start,
        doublings: raw.int("experiment.doublings")?.unwrap_or(3),
        m_sweep: raw.ints("experiment.m_sweep")?.unwrap_or_else(|| vec![4, 8, 16, 32]),
        eps: raw
            .floats("experiment.eps")?
            .unwrap_or_else(|| vec![0.1, 0.05, 0.02, 0.01, 0.005]),
        probe: raw.float("experiment.probe")?.unwrap_or(1e-5),
    };
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        let v = self.potential()?;
        let bad = |m: String| Err(LabError::Invalid(m));
        if self.experiment != ExperimentKind::LocalErrorSweep && self.t_final.is_none() {
            return Err(LabError::Missing("grid.t".into()));
        }
        if let Some(t) = self.t_final {
            if !(t > 0.0) {
                return bad(format!("grid.t must be positive, got {t}"));
            }
        }
        if self.experiment != ExperimentKind::ComplexityTable && self.hs.is_empty() {
            return Err(LabError::Missing("grid.n or grid.h".into()));
        }
        for &h in &self.hs {
            if !(h > 0.0) {
                return bad(format!("step size must be positive, got {h}"));
            }
            if self.t_final.is_some() {
                self.steps(h)?;
            }
        }
        if self.m.is_empty() || (self.m.len() != 1 && self.m.len() != self.schemes.len()) {
            return bad("grid.m needs one value or one per scheme".into());
        }
        if self.m.contains(&0) {
            return bad("grid.m must be positive".into());
        }
        if self.schemes.iter().any(|s| s.is_underdamped() && self.m_for(*s) < 2) {
            return bad("underdamped schemes need grid.m >= 2".into());
        }
        if !(self.gamma > 0.0) {
            return bad(format!("scheme.gamma must be positive, got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.fraction) {
            return bad(format!("scheme.fraction must lie in [0, 1], got {}", self.fraction));
        }
        if self.q.is_empty() || self.q.iter().any(|q| !(*q > 1.0)) {
            return bad("every q must exceed 1".into());
        }
        if self.n_paths < 2 {
            return bad("run.n_paths must be at least 2".into());
        }
        if self.threads == 0 {
            return bad("run.threads must be positive".into());
        }
        if self.m_sweep.iter().any(|m| *m == 0) || self.eps.iter().any(|e| !(*e > 0.0)) {
            return bad("m_sweep entries and eps must be positive".into());
        }
        if !(self.probe > 0.0) {
            return bad("experiment.probe must be positive".into());
        }
        if let StartSpec::Gaussian { sd, .. } = self.start {
            if !(sd >= 0.0) {
                return bad("run.start_sd must be non-negative".into());
            }
        }
        if self.experiment.uses_weights() {
            let q = self.q.iter().cloned().fold(1.0, f64::max);
            for &h in &self.hs {
                for s in &self.schemes {
                    check_step_bound(*s, h, v.beta, q)?;
                }
            }
        }
        Ok(())
    }

    pub fn potential(&self) -> Result<PotentialModel> {
        self.potential.build(self.tilt.as_deref())
    }

    pub fn dim(&self) -> usize {
        match &self.potential {
            PotentialSpec::Isotropic { dim, .. } | PotentialSpec::Product { dim, .. } => *dim,
            PotentialSpec::Anisotropic { spectrum } | PotentialSpec::Perturbed { spectrum, .. } => {
                spectrum.len()
            }
        }
    }

    /// Number of steps of size `h` covering `grid.t`.
    pub fn steps(&self, h: f64) -> Result<usize> {
        let t = self.t_final.ok_or_else(|| LabError::Missing("grid.t".into()))?;
        let n = (t / h).round();
        if n < 1.0 || (n * h - t).abs() > 1e-9 * t {
            return Err(LabError::Invalid(format!("h = {h} does not divide t = {t}")));
        }
        Ok(n as usize)
    }

    /// Scheme settings for path `index`; randomized schedules get an
    /// independent midpoint stream per path.
    pub fn spec(&self, scheme: Scheme, index: u64) -> SchemeSpec {
        let schedule = match self.schedule {
            ScheduleMode::Randomized => MidpointSchedule::RandomizedUniform {
                seed: self.seed,
                stream: index,
            },
            ScheduleMode::Deterministic if scheme.is_underdamped() => MidpointSchedule::DeterministicUd,
            ScheduleMode::Deterministic => MidpointSchedule::DeterministicOd {
                fraction: self.fraction,
            },
        };
        SchemeSpec::new(scheme, schedule, self.gamma)
    }

    pub fn m_for(&self, scheme: Scheme) -> usize {
        match self.schemes.iter().position(|s| *s == scheme) {
            Some(i) if self.m.len() == self.schemes.len() => self.m[i],
            _ => self.m[0],
        }
    }

    pub fn start_law(&self) -> StartLaw {
        match self.start {
            StartSpec::Stationary => StartLaw::Stationary,
            StartSpec::Gaussian { sd, .. } => StartLaw::Isotropic(sd),
        }
    }

    /// Resolved settings, one `key=value` per line. Thread count and output
    /// path are left out because they do not change any result.
    pub fn canonical(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        put("experiment", self.experiment.id().into());
        put("potential", format!("{:?}", self.potential));
        put("tilt", self.tilt.as_deref().map(list).unwrap_or_default());
        put("t", self.t_final.map(|t| format!("{t:?}")).unwrap_or_default());
        put("h", list(&self.hs));
        put(
            "m",
            self.m.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","),
        );
        put(
            "schemes",
            self.schemes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
        );
        put("schedule", format!("{:?}", self.schedule));
        put("fraction", format!("{:?}", self.fraction));
        put("gamma", format!("{:?}", self.gamma));
        put("q", list(&self.q));
        put("n_paths", self.n_paths.to_string());
        put("seed", self.seed.to_string());
        put("start", format!("{:?}", self.start));
        put("doublings", self.doublings.to_string());
        put(
            "m_sweep",
            self.m_sweep.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","),
        );
        put("eps", list(&self.eps));
        put("probe", format!("{:?}", self.probe));
        out
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Step-size conditions under which the weights are well defined.
pub fn check_step_bound(scheme: Scheme, h: f64, beta: f64, q: f64) -> Result<()> {
    match scheme {
        Scheme::Mlmc if h * beta * q > 1.0 => Err(LabError::StepBound(format!(
            "h <= 1/(beta*q) required for M-LMC weights (h = {h}, beta = {beta}, q = {q})"
        ))),
        Scheme::DmUlmc if h * (beta * q).sqrt() > 1.0 => Err(LabError::StepBound(format!(
            "h <= 1/sqrt(beta*q) required for DM-ULMC weights (h = {h}, beta = {beta}, q = {q})"
        ))),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractions_and_integers() {
        assert_eq!(number("1/16", 1).unwrap(), 0.0625);
        assert_eq!(integer("1e5", 1).unwrap(), 100_000);
        assert!(integer("2.5", 1).is_err());
        assert!(number("1/0", 1).is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let raw = Raw::parse("# top\n\n[grid]\nt = 0.5 # trailing\n").unwrap();
        assert_eq!(raw.get("grid.t").unwrap().value, "0.5");
    }
}
