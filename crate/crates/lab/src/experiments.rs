//! The built-in experiments. Each returns a [`Report`] with its rows and the
//! pass/fail checks against the thresholds compiled in here.

use std::time::Instant;

use midpoint_core::divergence::{
    diffusion_marginal_gaussian, estimate_kl, estimate_kl_control_variate, estimate_renyi,
    exact_path_kl_gaussian, gaussian_kl, mean_with_se, reference_marginal_gaussian,
    scheme_marginal_gaussian,
};
use midpoint_core::girsanov::{
    analyze_path, carleman_fredholm, log_weight, od_trace_diagnostics, path_drift,
    weight_from_steps, Detail, MalliavinBlocks, SolverOptions,
};
use midpoint_core::grid::{NoisePath, TimeGrid};
use midpoint_core::linalg::ols;
use midpoint_core::local_error::{local_error_sweep, LocalErrorConfig, Moment, SlopeFit};
use midpoint_core::mc::{initial_state, run_indexed};
use midpoint_core::potential::PotentialModel;
use midpoint_core::scheme::{Scheme, SchemeSpec};
use nalgebra::{DMatrix, DVector};

use crate::config::{ExperimentConfig, ExperimentKind, StartSpec};
use crate::error::{LabError, Result};
use crate::report::{Check, Report, ReportRow, Status};

pub const NORMALIZATION_MAX_SE: f64 = 0.01;
pub const NORMALIZATION_MAX_SECONDS: f64 = 120.0;
pub const ADAPTED_TOL: f64 = 1e-10;
pub const FD_REL_TOL: f64 = 1e-5;
pub const FD_ABS_FLOOR: f64 = 1e-10;
pub const CF_MIN_RATIO: f64 = 6.0;
pub const TRACE_GAP_RATIO: (f64, f64) = (1.8, 2.2);
pub const SWEEP_MAX_SECONDS: f64 = 900.0;
pub const MOMENTUM_STRONG_SLOPE: f64 = 4.5;
pub const WEAK_SLOPE: f64 = 5.5;
/// Largest step count tried by the complexity search.
pub const MAX_STEPS: usize = 1 << 20;

/// Minimum fitted KL slope in `h` at fixed horizon.
pub fn kl_slope_threshold(scheme: Scheme) -> Option<f64> {
    match scheme {
        Scheme::Mlmc => Some(0.8),
        Scheme::DmUlmc => Some(2.5),
        _ => None,
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    match cfg.experiment {
        ExperimentKind::Normalization => normalization(cfg),
        ExperimentKind::AdaptedEquivalence => adapted_equivalence(cfg),
        ExperimentKind::FdMalliavin => fd_malliavin(cfg),
        ExperimentKind::EtaRefinement => eta_refinement(cfg),
        ExperimentKind::KlOrderSweep => kl_order_sweep(cfg),
        ExperimentKind::LocalErrorSweep => local_errors(cfg),
        ExperimentKind::TraceDiagnostics => trace_diagnostics(cfg),
        ExperimentKind::ComplexityTable => complexity_table(cfg),
    }
}

fn state_dim(v: &PotentialModel, scheme: Scheme) -> usize {
    if scheme.is_underdamped() {
        2 * v.dim
    } else {
        v.dim
    }
}

fn gamma_of(cfg: &ExperimentConfig, scheme: Scheme) -> Option<f64> {
    scheme.is_underdamped().then_some(cfg.gamma)
}

/// Mean and (diagonal) covariance of the start law.
pub fn start_moments(
    cfg: &ExperimentConfig,
    v: &PotentialModel,
    scheme: Scheme,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = state_dim(v, scheme);
    match cfg.start {
        StartSpec::Gaussian { mean, sd } => Ok((
            DVector::from_element(n, mean),
            DMatrix::identity(n, n) * (sd * sd),
        )),
        StartSpec::Stationary => {
            let lam = v.quadratic_spectrum().ok_or_else(|| {
                LabError::Invalid("stationary start needs a quadratic potential".into())
            })?;
            if lam.iter().any(|l| !(*l > 0.0)) {
                return Err(LabError::Invalid(
                    "stationary start needs a positive spectrum".into(),
                ));
            }
            let g = v.gradient(&vec![0.0; v.dim])?;
            let mut mean = DVector::zeros(n);
            let mut var = DVector::from_element(n, 1.0);
            for i in 0..v.dim {
                mean[i] = -g[i] / lam[i];
                var[i] = 1.0 / lam[i];
            }
            Ok((mean, DMatrix::from_diagonal(&var)))
        }
    }
}

/// Start state of path `index`.
pub fn sample_start(
    cfg: &ExperimentConfig,
    moments: &(DVector<f64>, DMatrix<f64>),
    index: u64,
) -> Vec<f64> {
    let (mean, cov) = moments;
    let z = initial_state(cfg.seed, index, mean.len(), 1.0);
    (0..mean.len())
        .map(|i| mean[i] + cov[(i, i)].sqrt() * z[i])
        .collect()
}

fn grid_for(cfg: &ExperimentConfig, h: f64, m: usize) -> Result<TimeGrid> {
    Ok(TimeGrid::new(cfg.t_final.unwrap_or(h), cfg.steps(h)?, m)?)
}

fn seconds(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn monotone_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn normalization(cfg: &ExperimentConfig) -> Result<Report> {
    let v = cfg.potential()?;
    let mut rep = Report::new(cfg);
    for &scheme in &cfg.schemes {
        let moments = start_moments(cfg, &v, scheme)?;
        for &h in &cfg.hs {
            let clock = Instant::now();
            let grid = grid_for(cfg, h, cfg.m_for(scheme))?;
            let w = run_indexed(cfg.n_paths, cfg.threads, |i| {
                let path = NoisePath::sample(grid, v.dim, cfg.seed, i as u64).ok()?;
                let s0 = sample_start(cfg, &moments, i as u64);
                let lw = log_weight(&cfg.spec(scheme, i as u64), &v, &s0, &path, 1.0).ok()?;
                let m = lw.log_weight.exp();
                m.is_finite().then_some(m)
            })?;
            let ok: Vec<f64> = w.iter().flatten().cloned().collect();
            let rejected = w.len() - ok.len();
            let (mean, se) = mean_with_se(&ok);
            let secs = seconds(clock);
            let row = |q: &str, x: f64| {
                ReportRow::new(scheme.to_string(), q, v.dim, x)
                    .h(h)
                    .m(cfg.m_for(scheme))
                    .gamma(gamma_of(cfg, scheme))
                    .se(se)
                    .rejections(rejected)
                    .runtime(secs * 1e3)
            };
            rep.rows.push(row("mean_weight", mean));
            rep.rows.push(row("abs_deviation", (mean - 1.0).abs()));
            let tag = format!("{scheme} h={h}");
            rep.checks.push(Check::new(
                format!("unit-mean {tag}"),
                (mean - 1.0).abs() <= 3.0 * se,
                format!("|E[M] - 1| = {:.3e}, 3 SE = {:.3e}", (mean - 1.0).abs(), 3.0 * se),
            ));
            rep.checks.push(Check::new(
                format!("se {tag}"),
                se <= NORMALIZATION_MAX_SE,
                format!("SE = {se:.3e} (limit {NORMALIZATION_MAX_SE})"),
            ));
            rep.checks.push(Check::timed(
                format!("runtime {tag}"),
                secs <= NORMALIZATION_MAX_SECONDS * cfg.threads as f64,
                format!("{secs:.1} s on {} thread(s)", cfg.threads),
            ));
        }
    }
    Ok(rep)
}

/// Classical Girsanov exponent of the EM-LD drift, from an independent
/// replay of the Euler steps on the inner grid.
pub fn classical_euler_exponent(v: &PotentialModel, x0: &[f64], path: &NoisePath) -> Result<f64> {
    let d = v.dim;
    let eta = path.grid.eta();
    let m = path.grid.m;
    let (mut ip, mut en) = (0.0, 0.0);
    let mut x = x0.to_vec();
    for k in 0..path.grid.n_steps {
        let g0 = v.gradient(&x)?;
        let mut y = x.clone();
        for i in 0..m {
            let xi = path.cell(k, i);
            let gy = v.gradient(&y)?;
            for j in 0..d {
                // reference driven by xi + psi reproduces the Euler interpolant
                let psi = (eta / 2.0).sqrt() * (gy[j] - g0[j]);
                ip += psi * xi[j];
                en += 0.5 * psi * psi;
                y[j] += -eta * g0[j] + (2.0 * eta).sqrt() * xi[j];
            }
        }
        x = y;
    }
    Ok(-ip - en)
}

fn adapted_equivalence(cfg: &ExperimentConfig) -> Result<Report> {
    let v = cfg.potential()?;
    let mut rep = Report::new(cfg);
    let scheme = Scheme::EmLd;
    if cfg.schemes != [scheme] {
        return Err(LabError::Invalid("adapted-equivalence runs EM-LD only".into()));
    }
    let moments = start_moments(cfg, &v, scheme)?;
    for &h in &cfg.hs {
        let grid = grid_for(cfg, h, cfg.m_for(scheme))?;
        let res = run_indexed(cfg.n_paths, cfg.threads, |i| -> Result<(f64, f64)> {
            let path = NoisePath::sample(grid, v.dim, cfg.seed, i as u64)?;
            let s0 = sample_start(cfg, &moments, i as u64);
            let spec = cfg.spec(scheme, i as u64);
            let a = analyze_path(&spec, &v, &s0, &path, SolverOptions::default(), Detail::Core)?;
            let w = weight_from_steps(&a.steps, &path, 1.0);
            let classical = classical_euler_exponent(&v, &s0, &path)?;
            Ok((w.log_cf_det, (w.log_weight - classical).abs()))
        })?;
        let mut failed = 0;
        let (mut cf_max, mut diff_max) = (0.0f64, 0.0f64);
        for r in res {
            match r {
                Ok((cf, diff)) if cf.is_finite() && diff.is_finite() => {
                    cf_max = cf_max.max(cf.abs());
                    diff_max = diff_max.max(diff);
                }
                _ => failed += 1,
            }
        }
        let row = |q: &str, x: f64| {
            ReportRow::new(scheme.to_string(), q, v.dim, x)
                .h(h)
                .m(cfg.m_for(scheme))
                .rejections(failed)
        };
        rep.rows.push(row("max_abs_log_cf_det", cf_max));
        rep.rows.push(row("max_abs_weight_minus_classical", diff_max));
        rep.checks.push(Check::new(
            format!("log-cf-det h={h}"),
            cf_max == 0.0 && failed == 0,
            format!("max |log_cf_det| = {cf_max:e} over {} paths", cfg.n_paths),
        ));
        rep.checks.push(Check::new(
            format!("classical h={h}"),
            diff_max <= ADAPTED_TOL && failed == 0,
            format!("max |log M - classical| = {diff_max:.3e} (tol {ADAPTED_TOL:e})"),
        ));
    }
    Ok(rep)
}

/// Worst `|fd - analytic| / max(rel |analytic|, floor)` over all entries of
/// the path's Malliavin matrix, and the worst absolute difference.
pub fn fd_malliavin_error(
    spec: &SchemeSpec,
    v: &PotentialModel,
    s0: &[f64],
    path: &NoisePath,
    probe: f64,
) -> Result<(f64, f64)> {
    let opts = SolverOptions {
        tol: 1e-15,
        max_iter: 200,
    };
    let a = analyze_path(spec, v, s0, path, opts, Detail::Full)?;
    let dense = MalliavinBlocks::from_steps(&a.steps, true)?.dense();
    let drift = |p: &NoisePath| -> Result<Vec<f64>> {
        Ok(path_drift(&analyze_path(spec, v, s0, p, opts, Detail::Core)?))
    };
    let n = path.xi.len();
    let (mut worst, mut worst_abs) = (0.0f64, 0.0f64);
    for j in 0..n {
        let mut pp = path.clone();
        pp.xi[j] += probe;
        let mut pm = path.clone();
        pm.xi[j] -= probe;
        let (fp, fm) = (drift(&pp)?, drift(&pm)?);
        for i in 0..n {
            let fd = (fp[i] - fm[i]) / (2.0 * probe);
            let an = dense[(i, j)];
            let err = (fd - an).abs();
            worst_abs = worst_abs.max(err);
            worst = worst.max(err / (FD_REL_TOL * an.abs()).max(FD_ABS_FLOOR));
        }
    }
    Ok((worst, worst_abs))
}

fn fd_malliavin(cfg: &ExperimentConfig) -> Result<Report> {
    let v = cfg.potential()?;
    let mut rep = Report::new(cfg);
    for &scheme in &cfg.schemes {
        let moments = start_moments(cfg, &v, scheme)?;
        for &h in &cfg.hs {
            let grid = grid_for(cfg, h, cfg.m_for(scheme))?;
            let res = run_indexed(cfg.n_paths, cfg.threads, |i| {
                let path = NoisePath::sample(grid, v.dim, cfg.seed, i as u64)?;
                let s0 = sample_start(cfg, &moments, i as u64);
                fd_malliavin_error(&cfg.spec(scheme, i as u64), &v, &s0, &path, cfg.probe)
            })?;
            let failed = res.iter().filter(|r| r.is_err()).count();
            let worst = res.iter().flatten().map(|r| r.0).fold(0.0, f64::max);
            let worst_abs = res.iter().flatten().map(|r| r.1).fold(0.0, f64::max);
            let row = |q: &str, x: f64| {
                let r = ReportRow::new(scheme.to_string(), q, v.dim, x)
                    .h(h)
                    .m(cfg.m_for(scheme))
                    .gamma(gamma_of(cfg, scheme))
                    .rejections(failed);
                if failed > 0 {
                    r.status(Status::Failed)
                } else {
                    r
                }
            };
            rep.rows.push(row("max_scaled_error", worst));
            rep.rows.push(row("max_abs_error", worst_abs));
            rep.checks.push(Check::new(
                format!("fd {scheme} h={h}"),
                worst <= 1.0 && failed == 0,
                format!(
                    "worst error / max({FD_REL_TOL:e} |D|, {FD_ABS_FLOOR:e}) = {worst:.3} over {} paths",
                    cfg.n_paths
                ),
            ));
        }
    }
    Ok(rep)
}

fn eta_refinement(cfg: &ExperimentConfig) -> Result<Report> {
    let v = cfg.potential()?;
    let mut rep = Report::new(cfg);
    if cfg.doublings == 0 {
        return Err(LabError::Invalid("eta-refinement needs at least one doubling".into()));
    }
    for &scheme in &cfg.schemes {
        let moments = start_moments(cfg, &v, scheme)?;
        for &h in &cfg.hs {
            let grid = grid_for(cfg, h, cfg.m_for(scheme))?;
            let res = run_indexed(cfg.n_paths, cfg.threads, |i| -> Result<Vec<f64>> {
                let spec = cfg.spec(scheme, i as u64);
                let s0 = sample_start(cfg, &moments, i as u64);
                let mut path = NoisePath::sample(grid, v.dim, cfg.seed, i as u64)?;
                let mut prev = log_weight(&spec, &v, &s0, &path, 1.0)?.log_weight;
                let mut out = Vec::with_capacity(cfg.doublings);
                for _ in 0..cfg.doublings {
                    path = path.refine();
                    let w = log_weight(&spec, &v, &s0, &path, 1.0)?.log_weight;
                    out.push((w - prev).abs());
                    prev = w;
                }
                Ok(out)
            })?;
            let failed = res.iter().filter(|r| !matches!(r, Ok(x) if x.iter().all(|a| a.is_finite()))).count();
            let mut maxes = vec![0.0f64; cfg.doublings];
            for r in res.iter().flatten() {
                for (m, a) in maxes.iter_mut().zip(r) {
                    if a.is_finite() {
                        *m = m.max(*a);
                    }
                }
            }
            for (k, mx) in maxes.iter().enumerate() {
                rep.rows.push(
                    ReportRow::new(scheme.to_string(), "max_abs_weight_change", v.dim, *mx)
                        .h(h)
                        .m(cfg.m_for(scheme) << k)
                        .gamma(gamma_of(cfg, scheme))
                        .rejections(failed),
                );
            }
            rep.checks.push(Check::new(
                format!("refinement {scheme} h={h}"),
                monotone_decreasing(&maxes) && failed == 0,
                format!(
                    "max |log M(m) - log M(2m)| from m={}: {}",
                    cfg.m_for(scheme),
                    maxes.iter().map(|a| format!("{a:.3e}")).collect::<Vec<_>>().join(", ")
                ),
            ));
        }
    }
    Ok(rep)
}

/// Per-`h` outcome of the KL sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub h: f64,
    pub kl_cv: Moment,
    pub kl_plain: Moment,
    pub rejected: usize,
    pub exact_path_kl: Option<f64>,
    pub marginal_kl: Option<f64>,
    pub marginal_kl_inner: Option<f64>,
}

fn kl_order_sweep(cfg: &ExperimentConfig) -> Result<Report> {
    let v = cfg.potential()?;
    let mut rep = Report::new(cfg);
    let t = cfg.t_final.expect("validated");
    let gaussian = v.is_quadratic() && cfg.schedule == crate::config::ScheduleMode::Deterministic;
    for &scheme in &cfg.schemes {
        let clock = Instant::now();
        let moments = start_moments(cfg, &v, scheme)?;
        let gamma = gamma_of(cfg, scheme);
        let mut points = Vec::new();
        for &h in &cfg.hs {
            let grid = grid_for(cfg, h, cfg.m_for(scheme))?;
            let started = Instant::now();
            let res = run_indexed(cfg.n_paths, cfg.threads, |i| {
                let path = NoisePath::sample(grid, v.dim, cfg.seed, i as u64).ok()?;
                let s0 = sample_start(cfg, &moments, i as u64);
                let w = log_weight(&cfg.spec(scheme, i as u64), &v, &s0, &path, 1.0).ok()?;
                (w.invertible && w.log_weight.is_finite()).then_some((w.log_cf_det, w.energy, w.log_weight))
            })?;
            let ok: Vec<(f64, f64, f64)> = res.iter().flatten().cloned().collect();
            let rejected = res.len() - ok.len();
            let cf: Vec<f64> = ok.iter().map(|a| a.0).collect();
            let en: Vec<f64> = ok.iter().map(|a| a.1).collect();
            let lw: Vec<f64> = ok.iter().map(|a| a.2).collect();
            let cv = estimate_kl_control_variate(&cf, &en, rejected);
            let plain = estimate_kl(&lw, rejected);
            let ms = started.elapsed().as_secs_f64() * 1e3;
            let base = |q: &str, x: f64| {
                ReportRow::new(scheme.to_string(), q, v.dim, x)
                    .h(h)
                    .m(cfg.m_for(scheme))
                    .gamma(gamma)
                    .rejections(rejected)
                    .runtime(ms)
            };
            let flag = |r: ReportRow, unreliable: bool| {
                if unreliable {
                    r.status(Status::Failed)
                } else {
                    r
                }
            };
            rep.rows.push(flag(base("kl_cv", cv.value).se(cv.se), cv.unreliable));
            rep.rows.push(flag(base("kl_plain", plain.value).se(plain.se), plain.unreliable));
            for &q in &cfg.q {
                let r = estimate_renyi(&lw, rejected, q)?;
                rep.rows.push(flag(base("renyi", r.value).se(r.se).q(q), r.unreliable));
            }
            let mut point = SweepPoint {
                h,
                kl_cv: Moment { value: cv.value, se: cv.se },
                kl_plain: Moment { value: plain.value, se: plain.se },
                rejected,
                exact_path_kl: None,
                marginal_kl: None,
                marginal_kl_inner: None,
            };
            if gaussian {
                let spec = cfg.spec(scheme, 0);
                let (m0, c0) = &moments;
                match exact_path_kl_gaussian(&spec, &v, &grid, m0, c0) {
                    Ok(x) => {
                        point.exact_path_kl = Some(x);
                        rep.rows.push(base("kl_exact", x));
                    }
                    Err(_) => rep.rows.push(base("kl_exact", f64::NAN).status(Status::Failed)),
                }
                let (ms_, cs) = scheme_marginal_gaussian(&spec, &v, &grid, m0, c0)?;
                let (md, cd) = diffusion_marginal_gaussian(&v, gamma, t, m0, c0)?;
                let (mr, cr) = reference_marginal_gaussian(&v, gamma, &grid, m0, c0)?;
                let mk = gaussian_kl(&ms_, &cs, &md, &cd)?;
                let mi = gaussian_kl(&ms_, &cs, &mr, &cr)?;
                point.marginal_kl = Some(mk);
                point.marginal_kl_inner = Some(mi);
                rep.rows.push(base("marginal_kl", mk));
                rep.rows.push(base("marginal_kl_inner", mi));
            }
            points.push(point);
        }
        let secs = seconds(clock);
        sweep_checks(&mut rep, scheme, v.dim, cfg, gamma, &points, secs);
    }
    Ok(rep)
}

fn sweep_checks(
    rep: &mut Report,
    scheme: Scheme,
    d: usize,
    cfg: &ExperimentConfig,
    gamma: Option<f64>,
    points: &[SweepPoint],
    secs: f64,
) {
    let mut pts: Vec<&SweepPoint> = points.iter().collect();
    pts.sort_by(|a, b| b.h.total_cmp(&a.h));
    let hs: Vec<f64> = pts.iter().map(|p| p.h).collect();
    let kl: Vec<Moment> = pts.iter().map(|p| p.kl_cv).collect();
    let values: Vec<f64> = kl.iter().map(|k| k.value).collect();
    let fit = SlopeFit::from_points(&hs, &kl);
    match &fit {
        Ok(f) => rep.rows.push(
            ReportRow::new(scheme.to_string(), "slope:kl_cv", d, f.slope)
                .se(f.slope_se)
                .slope(f.slope)
                .m(cfg.m_for(scheme))
                .gamma(gamma),
        ),
        Err(_) => rep.rows.push(
            ReportRow::new(scheme.to_string(), "slope:kl_cv", d, f64::NAN)
                .m(cfg.m_for(scheme))
                .gamma(gamma)
                .status(Status::Failed),
        ),
    }
    let exact: Option<Vec<Moment>> = pts
        .iter()
        .map(|p| p.exact_path_kl.map(|value| Moment { value, se: 0.0 }))
        .collect();
    if let Some(Ok(f)) = exact.map(|e| SlopeFit::from_points(&hs, &e)) {
        rep.rows.push(
            ReportRow::new(scheme.to_string(), "slope:kl_exact", d, f.slope)
                .slope(f.slope)
                .m(cfg.m_for(scheme))
                .gamma(gamma),
        );
    }
    let listed = values.iter().map(|a| format!("{a:.3e}")).collect::<Vec<_>>().join(", ");
    rep.checks.push(Check::new(
        format!("monotone {scheme}"),
        monotone_decreasing(&values),
        format!("KL estimates by decreasing h: {listed}"),
    ));
    if let Some(bound) = kl_slope_threshold(scheme) {
        let (pass, detail) = match &fit {
            Ok(f) => (
                f.slope >= bound,
                format!("slope {:.3} +- {:.3} (need >= {bound})", f.slope, f.slope_se),
            ),
            Err(e) => (false, format!("no fit: {e}")),
        };
        rep.checks.push(Check::new(format!("slope {scheme}"), pass, detail));
    }
    for p in &pts {
        if let Some(mk) = p.marginal_kl {
            let limit = p.kl_cv.value + 3.0 * p.kl_cv.se;
            rep.checks.push(Check::new(
                format!("data-processing {scheme} h={}", p.h),
                mk <= limit,
                format!("marginal KL {mk:.4e} vs path KL + 3 SE {limit:.4e}"),
            ));
        }
    }
    rep.checks.push(Check::timed(
        format!("runtime {scheme}"),
        secs <= SWEEP_MAX_SECONDS * cfg.threads as f64,
        format!("{secs:.1} s for {} paths x {} step sizes", cfg.n_paths, cfg.hs.len()),
    ));
}

fn local_errors(cfg: &ExperimentConfig) -> Result<Report> {
    let v = cfg.potential()?;
    let mut rep = Report::new(cfg);
    for &scheme in &cfg.schemes {
        let lc = LocalErrorConfig {
            spec: cfg.spec(scheme, 0),
            hs: cfg.hs.clone(),
            start: cfg.start_law(),
            n_paths: cfg.n_paths,
            seed: cfg.seed,
            threads: cfg.threads,
        };
        let r = local_error_sweep(&lc, &v)?;
        let gamma = gamma_of(cfg, scheme);
        for p in &r.points {
            let mut put = |q: &str, m: Option<Moment>| {
                if let Some(m) = m {
                    rep.rows.push(
                        ReportRow::new(scheme.to_string(), q, v.dim, m.value)
                            .se(m.se)
                            .h(p.h)
                            .gamma(gamma),
                    );
                }
            };
            put("strong_x", Some(p.strong_x));
            put("weak_x", Some(p.weak_x));
            put("strong_p", p.strong_p);
            put("weak_p", p.weak_p);
            put("weak", Some(p.weak));
        }
        let fits = [
            ("strong_x", r.strong_x),
            ("weak_x", r.weak_x),
            ("strong_p", r.strong_p),
            ("weak_p", r.weak_p),
            ("weak", r.weak),
        ];
        for (name, f) in fits {
            if let Some(f) = f {
                rep.rows.push(
                    ReportRow::new(scheme.to_string(), format!("slope:{name}"), v.dim, f.slope)
                        .se(f.slope_se)
                        .slope(f.slope)
                        .gamma(gamma),
                );
            }
        }
        if scheme == Scheme::DmUlmc {
            let mut check = |name: &str, f: Option<SlopeFit>, bound: f64| {
                let (pass, detail) = match f {
                    Some(f) => (
                        f.clears(bound, 1.0),
                        format!("slope {:.3} - 1 SE ({:.3}) vs bound {bound}", f.slope, f.slope_se),
                    ),
                    None => (false, "no fit".into()),
                };
                rep.checks.push(Check::new(format!("{name} {scheme}"), pass, detail));
            };
            check("momentum-strong", r.strong_p, MOMENTUM_STRONG_SLOPE);
            check("weak", r.weak, WEAK_SLOPE);
        }
    }
    Ok(rep)
}

/// Carleman-Fredholm remainder `|log_cf_det + 1/2 tr(D^2)|` of one path,
/// together with the largest single-step remainder.
pub fn cf_remainder(
    spec: &SchemeSpec,
    v: &PotentialModel,
    s0: &[f64],
    path: &NoisePath,
) -> Result<(f64, f64)> {
    let a = analyze_path(spec, v, s0, path, SolverOptions::default(), Detail::Core)?;
    let (mut total, mut worst) = (0.0, 0.0f64);
    for st in &a.steps {
        let exact = carleman_fredholm(&st.jac.core, 1.0).log_det;
        let second = -0.5 * (&st.jac.core * &st.jac.core).trace();
        total += exact - second;
        worst = worst.max((exact - second).abs());
    }
    Ok((total.abs(), worst))
}

fn trace_diagnostics(cfg: &ExperimentConfig) -> Result<Report> {
    let v = cfg.potential()?;
    let mut rep = Report::new(cfg);
    if cfg.schemes.iter().any(|s| *s != Scheme::Mlmc) {
        return Err(LabError::Invalid("trace-diagnostics runs M-LMC only".into()));
    }
    let scheme = Scheme::Mlmc;
    let moments = start_moments(cfg, &v, scheme)?;

    // log-det expansion at fixed horizon
    let mut hs = cfg.hs.clone();
    hs.sort_by(|a, b| b.total_cmp(a));
    let mut rems = Vec::new();
    for &h in &hs {
        let grid = grid_for(cfg, h, cfg.m_for(scheme))?;
        let res = run_indexed(cfg.n_paths, cfg.threads, |i| {
            let path = NoisePath::sample(grid, v.dim, cfg.seed, i as u64)?;
            let s0 = sample_start(cfg, &moments, i as u64);
            cf_remainder(&cfg.spec(scheme, i as u64), &v, &s0, &path)
        })?;
        let ok: Vec<(f64, f64)> = res.iter().flatten().cloned().collect();
        let failed = res.len() - ok.len();
        let (mean, se) = mean_with_se(&ok.iter().map(|a| a.0).collect::<Vec<_>>());
        let (step_mean, step_se) = mean_with_se(&ok.iter().map(|a| a.1).collect::<Vec<_>>());
        let row = |q: &str, x: f64, se: f64| {
            ReportRow::new(scheme.to_string(), q, v.dim, x)
                .se(se)
                .h(h)
                .m(cfg.m_for(scheme))
                .rejections(failed)
        };
        rep.rows.push(row("cf_remainder", mean, se));
        rep.rows.push(row("cf_remainder_max_step", step_mean, step_se));
        rems.push(mean);
    }
    for (w, hw) in rems.windows(2).zip(hs.windows(2)) {
        let ratio = w[0] / w[1];
        rep.checks.push(Check::new(
            format!("cf-expansion h={}->{}", hw[0], hw[1]),
            ratio >= CF_MIN_RATIO,
            format!("remainder ratio {ratio:.3} (need >= {CF_MIN_RATIO})"),
        ));
    }

    // trace limits under inner-grid refinement
    let h = hs[0];
    let mut sweep = cfg.m_sweep.clone();
    sweep.sort_unstable();
    let base = TimeGrid::new(h, 1, sweep[0])?;
    let mut path = NoisePath::sample(base, v.dim, cfg.seed, 0)?;
    let x0 = sample_start(cfg, &moments, 0);
    let mut gaps: Vec<(usize, f64, f64)> = Vec::new();
    for &m in &sweep {
        while path.grid.m < m {
            path = path.refine();
        }
        if path.grid.m != m {
            return Err(LabError::Invalid("m_sweep must be a doubling sequence".into()));
        }
        let t = cfg.spec(scheme, 0).schedule.od_index(0, &path.grid)?;
        let r = od_trace_diagnostics(&v, &x0, path.step(0), path.grid.eta(), t)?;
        let cross_gap = (r.cross - r.cross_limit).abs();
        let rank_gap = (r.rank_one - r.rank_one_limit).abs();
        let row = |q: &str, x: f64| ReportRow::new(scheme.to_string(), q, v.dim, x).h(h).m(m);
        rep.rows.push(row("tr_a2", r.tr_a2));
        rep.rows.push(row("cross", r.cross));
        rep.rows.push(row("cross_limit", r.cross_limit));
        rep.rows.push(row("cross_gap", cross_gap));
        rep.rows.push(row("rank_one", r.rank_one));
        rep.rows.push(row("rank_one_limit", r.rank_one_limit));
        rep.rows.push(row("rank_one_gap", rank_gap));
        rep.checks.push(Check::new(
            format!("adapted-square m={m}"),
            r.tr_a2.abs() <= 1e-12,
            format!("tr(A^2) = {:e}", r.tr_a2),
        ));
        gaps.push((m, cross_gap, rank_gap));
    }
    let (lo, hi) = TRACE_GAP_RATIO;
    for w in gaps.windows(2) {
        let (rc, rr) = (w[0].1 / w[1].1, w[0].2 / w[1].2);
        rep.checks.push(Check::new(
            format!("trace-gap m={}->{}", w[0].0, w[1].0),
            (lo..=hi).contains(&rc) && (lo..=hi).contains(&rr),
            format!("gap ratios: cross {rc:.4}, rank-one {rr:.4} (need in [{lo}, {hi}])"),
        ));
    }
    Ok(rep)
}

/// Smallest `N` in `[1, MAX_STEPS]` with `f(N) <= target`, assuming `f`
/// decreases in `N`. Errors count as misses.
pub fn smallest_steps(target: f64, mut f: impl FnMut(usize) -> Option<f64>) -> Option<(usize, f64)> {
    let mut meets = |n: usize| f(n).filter(|x| *x <= target);
    if let Some(x) = meets(1) {
        return Some((1, x));
    }
    let mut lo = 1;
    let mut hi = 2;
    let mut val = loop {
        if hi > MAX_STEPS {
            return None;
        }
        if let Some(x) = meets(hi) {
            break x;
        }
        lo = hi;
        hi *= 2;
    };
    // invariant: lo misses, hi meets
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        match meets(mid) {
            Some(x) => {
                hi = mid;
                val = x;
            }
            None => lo = mid,
        }
    }
    Some((hi, val))
}

/// Path and marginal accuracy of `scheme` with `n` steps over `[0, T]`.
pub struct Accuracy<'a> {
    pub cfg: &'a ExperimentConfig,
    pub v: &'a PotentialModel,
    pub scheme: Scheme,
    pub moments: (DVector<f64>, DMatrix<f64>),
    pub target: (DVector<f64>, DMatrix<f64>),
}

impl<'a> Accuracy<'a> {
    pub fn new(cfg: &'a ExperimentConfig, v: &'a PotentialModel, scheme: Scheme) -> Result<Self> {
        let moments = start_moments(cfg, v, scheme)?;
        let t = cfg.t_final.expect("validated");
        let target = diffusion_marginal_gaussian(v, gamma_of(cfg, scheme), t, &moments.0, &moments.1)?;
        Ok(Self {
            cfg,
            v,
            scheme,
            moments,
            target,
        })
    }

    fn grid(&self, n: usize) -> Option<TimeGrid> {
        TimeGrid::new(self.cfg.t_final?, n, self.cfg.m_for(self.scheme)).ok()
    }

    pub fn path_kl(&self, n: usize) -> Option<f64> {
        let spec = self.cfg.spec(self.scheme, 0);
        exact_path_kl_gaussian(&spec, self.v, &self.grid(n)?, &self.moments.0, &self.moments.1)
            .ok()
            .filter(|x| x.is_finite())
    }

    pub fn marginal_kl(&self, n: usize) -> Option<f64> {
        let spec = self.cfg.spec(self.scheme, 0);
        let (m, c) =
            scheme_marginal_gaussian(&spec, self.v, &self.grid(n)?, &self.moments.0, &self.moments.1).ok()?;
        gaussian_kl(&m, &c, &self.target.0, &self.target.1)
            .ok()
            .filter(|x| x.is_finite())
    }
}

/// Fitted exponent of `N` against `1/eps` over the reachable rows.
fn exponent(points: &[(f64, usize)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let x: Vec<f64> = points.iter().map(|p| (1.0 / p.0).ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| (p.1 as f64).ln()).collect();
    Some(ols(&x, &y).0)
}

fn complexity_table(cfg: &ExperimentConfig) -> Result<Report> {
    let v = cfg.potential()?;
    if !v.is_quadratic() {
        return Err(LabError::Invalid("complexity-table needs a Gaussian target".into()));
    }
    if cfg.schedule != crate::config::ScheduleMode::Deterministic {
        return Err(LabError::Invalid("complexity-table needs deterministic midpoints".into()));
    }
    let mut rep = Report::new(cfg);
    let mut path_exp = Vec::new();
    for &scheme in &cfg.schemes {
        let acc = Accuracy::new(cfg, &v, scheme)?;
        let gamma = gamma_of(cfg, scheme);
        let qps = scheme.queries_per_step();
        for (metric, f) in [
            ("path", &(|n| acc.path_kl(n)) as &dyn Fn(usize) -> Option<f64>),
            ("marginal", &|n| acc.marginal_kl(n)),
        ] {
            let mut reach = Vec::new();
            for &eps in &cfg.eps {
                let row = |q: &str, x: f64| {
                    ReportRow::new(scheme.to_string(), format!("{metric}:{q}"), v.dim, x)
                        .m(cfg.m_for(scheme))
                        .gamma(gamma)
                };
                match smallest_steps(eps * eps, f) {
                    Some((n, kl)) => {
                        let h = cfg.t_final.expect("validated") / n as f64;
                        rep.rows.push(row("eps", eps).h(h));
                        rep.rows.push(row("n_steps", n as f64).h(h));
                        rep.rows.push(row("grad_queries", (n * qps) as f64).h(h));
                        rep.rows.push(row("kl", kl).h(h));
                        reach.push((eps, n));
                    }
                    None => {
                        rep.rows.push(row("eps", eps).status(Status::Unreachable));
                        rep.rows.push(row("n_steps", f64::NAN).status(Status::Unreachable));
                    }
                }
            }
            let e = exponent(&reach);
            rep.rows.push(
                ReportRow::new(scheme.to_string(), format!("{metric}:exponent"), v.dim, e.unwrap_or(f64::NAN))
                    .slope(e.unwrap_or(f64::NAN))
                    .m(cfg.m_for(scheme))
                    .gamma(gamma),
            );
            if metric == "path" {
                path_exp.push((scheme, e));
            }
        }
    }
    let find = |s: Scheme| path_exp.iter().find(|p| p.0 == s).and_then(|p| p.1);
    if let (Some(dm), Some(ul), Some(ml)) = (find(Scheme::DmUlmc), find(Scheme::Ulmc), find(Scheme::Mlmc)) {
        rep.checks.push(Check::new(
            "exponent-ordering",
            dm <= ul && ul <= ml,
            format!("N ~ (1/eps)^k with k: DM-ULMC {dm:.3}, ULMC {ul:.3}, M-LMC {ml:.3} (qualitative)"),
        ));
    }
    // dimension doubling at the middle tolerance
    if cfg.schemes.contains(&Scheme::Mlmc) && cfg.schemes.contains(&Scheme::DmUlmc) {
        let eps = cfg.eps[cfg.eps.len() / 2];
        let mut wide = cfg.clone();
        wide.potential = cfg.potential.doubled();
        wide.tilt = cfg.tilt.as_ref().map(|t| t.iter().chain(t.iter()).cloned().collect());
        let v2 = wide.potential()?;
        let mut factor = |s: Scheme| -> Result<Option<f64>> {
            let a = Accuracy::new(cfg, &v, s)?;
            let b = Accuracy::new(&wide, &v2, s)?;
            let n1 = smallest_steps(eps * eps, |n| a.path_kl(n));
            let n2 = smallest_steps(eps * eps, |n| b.path_kl(n));
            let f = match (n1, n2) {
                (Some(a), Some(b)) => Some(b.0 as f64 / a.0 as f64),
                _ => None,
            };
            rep.rows.push(
                ReportRow::new(s.to_string(), "path:dim_doubling_factor", v.dim, f.unwrap_or(f64::NAN))
                    .m(cfg.m_for(s))
                    .gamma(gamma_of(cfg, s)),
            );
            Ok(f)
        };
        let fm = factor(Scheme::Mlmc)?;
        let fd = factor(Scheme::DmUlmc)?;
        let (pass, detail) = match (fm, fd) {
            (Some(a), Some(b)) => (a >= b, format!("N(2d)/N(d) at eps={eps}: M-LMC {a:.3}, DM-ULMC {b:.3}")),
            _ => (false, format!("unreachable at eps={eps}")),
        };
        rep.checks.push(Check::new("dim-doubling", pass, detail));
    }
    Ok(rep)
}
