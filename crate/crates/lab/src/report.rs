//! CSV reports with a versioned `#` header.

use std::fmt::Write as _;

use crate::config::{ExperimentConfig, CSV_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Failed,
    Unreachable,
}

impl Status {
    fn as_str(&self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Failed => "failed",
            Status::Unreachable => "unreachable",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scheme: String,
    /// What `estimate` measures, e.g. `kl_cv` or `slope:kl_cv`.
    pub quantity: String,
    pub h: Option<f64>,
    pub d: usize,
    pub q: Option<f64>,
    pub m: Option<usize>,
    pub gamma: Option<f64>,
    pub estimate: f64,
    pub se: Option<f64>,
    pub slope: Option<f64>,
    pub rejections: Option<usize>,
    pub status: Status,
    pub runtime_ms: Option<f64>,
}

impl ReportRow {
    pub fn new(scheme: impl Into<String>, quantity: impl Into<String>, d: usize, estimate: f64) -> Self {
        Self {
            scheme: scheme.into(),
            quantity: quantity.into(),
            h: None,
            d,
            q: None,
            m: None,
            gamma: None,
            estimate,
            se: None,
            slope: None,
            rejections: None,
            status: if estimate.is_finite() { Status::Ok } else { Status::Failed },
            runtime_ms: None,
        }
    }

    pub fn h(mut self, h: f64) -> Self {
        self.h = Some(h);
        self
    }
    pub fn q(mut self, q: f64) -> Self {
        self.q = Some(q);
        self
    }
    pub fn m(mut self, m: usize) -> Self {
        self.m = Some(m);
        self
    }
    pub fn gamma(mut self, g: Option<f64>) -> Self {
        self.gamma = g;
        self
    }
    pub fn se(mut self, se: f64) -> Self {
        self.se = Some(se);
        self
    }
    pub fn slope(mut self, s: f64) -> Self {
        self.slope = Some(s);
        self
    }
    pub fn rejections(mut self, r: usize) -> Self {
        self.rejections = Some(r);
        self
    }
    pub fn status(mut self, s: Status) -> Self {
        self.status = s;
        self
    }
    pub fn runtime(mut self, ms: f64) -> Self {
        self.runtime_ms = Some(ms);
        self
    }
}

/// A built-in pass/fail threshold evaluated by an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
    /// Wall-clock checks are printed but kept out of the CSV.
    pub timing: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
            timing: false,
        }
    }

    pub fn timed(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            timing: true,
            ..Self::new(name, pass, detail)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
    pub checks: Vec<Check>,
}

pub const COLUMNS: &[&str] = &[
    "experiment",
    "config_hash",
    "scheme",
    "quantity",
    "h",
    "d",
    "q",
    "m",
    "gamma",
    "estimate",
    "se",
    "slope",
    "rejections",
    "status",
];

/// 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

impl Report {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            experiment: cfg.experiment.id().into(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            rows: Vec::new(),
            checks: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# midpoint-lab csv v{CSV_VERSION}");
        let _ = writeln!(out, "# experiment={}", self.experiment);
        let _ = writeln!(out, "# config_hash={}", self.config_hash);
        let _ = writeln!(out, "# seed={}", self.seed);
        for c in self.checks.iter().filter(|c| !c.timing) {
            let verdict = if c.pass { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "# check {} {verdict}: {}", c.name, c.detail);
        }
        out.push_str(&COLUMNS.join(","));
        if timing {
            out.push_str(",runtime_ms");
        }
        out.push('\n');
        for r in &self.rows {
            let fields = [
                self.experiment.clone(),
                self.config_hash.clone(),
                r.scheme.clone(),
                r.quantity.clone(),
                opt(r.h),
                r.d.to_string(),
                opt(r.q),
                r.m.map(|m| m.to_string()).unwrap_or_default(),
                opt(r.gamma),
                fmt_num(r.estimate),
                opt(r.se),
                opt(r.slope),
                r.rejections.map(|x| x.to_string()).unwrap_or_default(),
                r.status.as_str().into(),
            ];
            out.push_str(&fields.join(","));
            if timing {
                out.push(',');
                out.push_str(&opt(r.runtime_ms));
            }
            out.push('\n');
        }
        out
    }

    /// One line per check, for the terminal.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let verdict = if c.pass { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{verdict} {} {}: {}", self.experiment, c.name, c.detail);
        }
        let _ = write!(
            out,
            "{} {} ({} rows, config {})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.experiment,
            self.rows.len(),
            self.config_hash
        );
        out
    }
}
