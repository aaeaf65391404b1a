//! The acceptance suite run by `midpoint-lab verify`.

use std::path::Path;
use std::sync::OnceLock;

use crate::config::{load_config, ExperimentConfig, ExperimentKind};
use crate::error::Result;
use crate::experiments::run_experiment;
use crate::report::{Check, Report};

const NORMALIZATION: &str = "\
[experiment]
name = normalization
[potential]
kind = isotropic
dim = 2
scale = 1
[grid]
t = 0.5
n = 8
m = 8
[scheme]
name = M-LMC
fraction = 0.5
[run]
n_paths = 100000
seed = 1
";

const ADAPTED: &str = "\
[experiment]
name = adapted-equivalence
[potential]
kind = perturbed
spectrum = 1, 0.5, 0.75
amplitude = 0.2
frequency = 1
[grid]
t = 0.5
n = 4
m = 8
[scheme]
name = EM-LD
[run]
n_paths = 100
seed = 1
";

const FD: &str = "\
[experiment]
name = fd-malliavin
probe = 1e-5
[potential]
kind = perturbed
spectrum = 1, 0.5
amplitude = 0.2
frequency = 1
[grid]
t = 0.5
n = 2
m = 4
[scheme]
name = M-LMC, DM-ULMC
[run]
n_paths = 20
seed = 1
";

const CF_EXPANSION: &str = "\
[experiment]
name = trace-diagnostics
m_sweep = 4, 8
[potential]
kind = isotropic
dim = 2
scale = 1
[grid]
t = 0.8
h = 0.2, 0.1, 0.05
m = 8
[scheme]
name = M-LMC
[run]
n_paths = 20
seed = 1
";

const TRACE_LIMITS: &str = "\
[experiment]
name = trace-diagnostics
m_sweep = 4, 8, 16, 32
[potential]
kind = anisotropic
spectrum = 0.5, 1
[grid]
t = 0.2
h = 0.2
m = 4
[scheme]
name = M-LMC
[run]
n_paths = 2
seed = 1
";

const KL_MLMC: &str = "\
[experiment]
name = kl-order-sweep
[potential]
kind = isotropic
dim = 2
scale = 1
[grid]
t = 0.5
h = 1/8, 1/16, 1/32, 1/64
m = 8
[scheme]
name = M-LMC
[run]
q = 2
n_paths = 100000
seed = 1
";

const KL_DMULMC: &str = "\
[experiment]
name = kl-order-sweep
[potential]
kind = isotropic
dim = 2
scale = 1
[grid]
t = 0.5
h = 1/8, 1/16, 1/32, 1/64
m = 256
[scheme]
name = DM-ULMC
gamma = 1
[run]
q = 2
n_paths = 100000
seed = 1
";

const LOCAL_ERRORS: &str = "\
[experiment]
name = local-error-sweep
[potential]
kind = anisotropic
spectrum = 0.5, 1
[grid]
h = 0.4, 0.2, 0.1, 0.05
[scheme]
name = DM-ULMC
gamma = 1
[run]
start = stationary
n_paths = 20000
seed = 1
";

const REFINEMENT: &str = "\
[experiment]
name = eta-refinement
doublings = 3
[potential]
kind = perturbed
spectrum = 1, 0.5
amplitude = 0.2
frequency = 1
[grid]
t = 0.5
n = 4
m = 8
[scheme]
name = M-LMC, DM-ULMC
[run]
n_paths = 100
seed = 1
";

const COMPLEXITY: &str = "\
[experiment]
name = complexity-table
eps = 0.1, 0.05, 0.02, 0.01, 0.005
[potential]
kind = anisotropic
spectrum = 0.25, 0.5, 0.75, 1
[grid]
t = 1
m = 8, 8, 128
[scheme]
name = M-LMC, ULMC, DM-ULMC
gamma = 1
[run]
start_mean = 1
start_sd = 0.7071067811865476
n_paths = 2
seed = 1
";

pub const CRITERIA: [(u8, &str); 12] = [
    (1, "normalization"),
    (2, "adapted reduction"),
    (3, "finite-difference Malliavin"),
    (4, "log-det expansion"),
    (5, "trace limits"),
    (6, "KL order M-LMC"),
    (7, "KL order DM-ULMC"),
    (8, "local errors DM-ULMC"),
    (9, "eta-refinement"),
    (10, "data processing"),
    (11, "determinism"),
    (12, "complexity ordering"),
];

/// Built-in config texts behind a criterion (none for 10 and 11, which
/// reuse the others).
pub fn config_texts(id: u8) -> Vec<&'static str> {
    match id {
        1 => vec![NORMALIZATION],
        2 => vec![ADAPTED],
        3 => vec![FD],
        4 => vec![CF_EXPANSION],
        5 => vec![TRACE_LIMITS],
        6 => vec![KL_MLMC],
        7 => vec![KL_DMULMC],
        8 => vec![LOCAL_ERRORS],
        9 => vec![REFINEMENT],
        12 => vec![COMPLEXITY],
        _ => vec![],
    }
}

/// Smoke-test sizes: few paths and tolerances, same code paths.
pub fn shrink(cfg: &mut ExperimentConfig) {
    cfg.n_paths = cfg.n_paths.min(256);
    if cfg.experiment == ExperimentKind::ComplexityTable {
        cfg.eps.truncate(2);
    }
}

fn which_checks(id: u8, c: &Check) -> bool {
    match id {
        4 => c.name.starts_with("cf-expansion"),
        5 => c.name.starts_with("trace-gap") || c.name.starts_with("adapted-square"),
        6 | 7 => !c.name.starts_with("data-processing"),
        10 => c.name.starts_with("data-processing"),
        _ => true,
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: u8,
    pub title: &'static str,
    pub pass: bool,
    /// Checks that decided the verdict, as `PASS name: detail` lines.
    pub details: Vec<String>,
    pub reports: Vec<Report>,
}

impl Outcome {
    pub fn line(&self) -> String {
        let failed = self.details.iter().filter(|d| d.starts_with("FAIL")).count();
        format!(
            "{} criterion {} ({}): {} checks, {} failed",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.details.len(),
            failed
        )
    }
}

/// Runs criteria, caching the reports that several criteria share.
pub struct Suite {
    pub quick: bool,
    pub threads: usize,
    cache: [OnceLock<std::result::Result<Report, String>>; 13],
}

impl Suite {
    pub fn new(quick: bool, threads: usize) -> Self {
        Self {
            quick,
            threads,
            cache: Default::default(),
        }
    }

    pub fn config(&self, text: &str) -> Result<ExperimentConfig> {
        let mut cfg = load_config(text)?;
        cfg.threads = self.threads;
        if self.quick {
            shrink(&mut cfg);
        }
        Ok(cfg)
    }

    fn report(&self, id: u8) -> std::result::Result<Report, String> {
        self.cache[id as usize]
            .get_or_init(|| {
                let text = config_texts(id)[0];
                let cfg = self.config(text).map_err(|e| e.to_string())?;
                run_experiment(&cfg).map_err(|e| e.to_string())
            })
            .clone()
    }

    pub fn criterion(&self, id: u8) -> Outcome {
        let title = CRITERIA[id as usize - 1].1;
        let sources: Vec<u8> = match id {
            10 => vec![6, 7],
            11 => return self.determinism(),
            _ => vec![id],
        };
        let mut details = Vec::new();
        let mut reports = Vec::new();
        let mut pass = true;
        for src in sources {
            match self.report(src) {
                Ok(r) => {
                    for c in r.checks.iter().filter(|c| which_checks(id, c)) {
                        pass &= c.pass;
                        let verdict = if c.pass { "PASS" } else { "FAIL" };
                        details.push(format!("{verdict} {}: {}", c.name, c.detail));
                    }
                    reports.push(r);
                }
                Err(e) => {
                    pass = false;
                    details.push(format!("FAIL run: {e}"));
                }
            }
        }
        if details.is_empty() {
            pass = false;
            details.push("FAIL no checks evaluated".into());
        }
        Outcome {
            id,
            title,
            pass,
            details,
            reports,
        }
    }

    /// Quick-size runs of every built-in config: twice on one thread, once
    /// on eight, compared byte for byte.
    fn determinism(&self) -> Outcome {
        let mut details = Vec::new();
        let mut pass = true;
        let run = |text: &str, threads: usize| -> Result<String> {
            let mut cfg = load_config(text)?;
            shrink(&mut cfg);
            cfg.threads = threads;
            Ok(run_experiment(&cfg)?.to_csv(false))
        };
        for (id, _) in CRITERIA {
            for text in config_texts(id) {
                let result = (|| -> Result<(bool, bool)> {
                    let a = run(text, 1)?;
                    let b = run(text, 1)?;
                    let c = run(text, 8)?;
                    Ok((a == b, a == c))
                })();
                let (ok, detail) = match result {
                    Ok((rerun, threads)) => (
                        rerun && threads,
                        format!("rerun identical: {rerun}, 1 vs 8 threads identical: {threads}"),
                    ),
                    Err(e) => (false, format!("run failed: {e}")),
                };
                pass &= ok;
                let verdict = if ok { "PASS" } else { "FAIL" };
                details.push(format!("{verdict} config of criterion {id}: {detail}"));
            }
        }
        Outcome {
            id: 11,
            title: CRITERIA[10].1,
            pass,
            details,
            reports: Vec::new(),
        }
    }
}

/// Runs every criterion, printing one verdict line each (plus failing
/// details) and writing the reports to `out_dir` when given.
pub fn run_all(suite: &Suite, out_dir: Option<&Path>) -> Result<Vec<Outcome>> {
    let mut out = Vec::new();
    for (id, _) in CRITERIA {
        let o = suite.criterion(id);
        println!("{}", o.line());
        for d in o.details.iter().filter(|d| d.starts_with("FAIL")) {
            println!("    {d}");
        }
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
            for (k, r) in o.reports.iter().enumerate() {
                let name = format!("criterion{:02}-{}-{}.csv", id, k, r.experiment);
                std::fs::write(dir.join(name), r.to_csv(false))?;
            }
        }
        out.push(o);
    }
    Ok(out)
}
