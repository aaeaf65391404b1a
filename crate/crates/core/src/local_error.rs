//! One-step strong and weak errors of a scheme against the diffusion it
//! discretizes, under synchronous coupling.
//!
//! For quadratic potentials with a diagonal Hessian the coupled pair is a
//! linear functional of one Brownian motion on `[0, h]`, so the scheme's
//! stochastic integrals and the exact flow's noise are drawn jointly from
//! their Gram matrix. This is the inner-grid limit `m -> infinity`; on a fixed
//! inner grid the left-endpoint sums themselves carry an error of order `h/m`
//! that would swamp the high orders being measured. Other potentials use a
//! 256-cell inner grid for both the scheme and the reference.

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::expint::ExpIntegrals;
use crate::grid::{derive_stream, purpose, CellRng, MidpointSchedule, NoisePath, TimeGrid};
use crate::linalg::{ols, pairwise_mean};
use crate::mc::run_indexed;
use crate::ou::psd_sqrt;
use crate::overdamped::em_ld_reference;
use crate::potential::PotentialModel;
use crate::scheme::{simulate, Scheme, SchemeSpec};
use crate::underdamped::{dmulmc_marginal, ud_reference, UdCoefficients, UdNoise};

/// Inner cells used when no closed-form coupling is available.
pub const REFERENCE_CELLS: usize = 256;

/// Law of the start of the step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StartLaw {
    /// Invariant Gaussian of a quadratic potential (`p ~ N(0, I)` for the
    /// kinetic case).
    Stationary,
    /// `N(0, s^2 I)` in every coordinate.
    Isotropic(f64),
}

#[derive(Debug, Clone)]
pub struct LocalErrorConfig {
    pub spec: SchemeSpec,
    pub hs: Vec<f64>,
    pub start: StartLaw,
    pub n_paths: usize,
    pub seed: u64,
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moment {
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalErrorPoint {
    pub h: f64,
    pub strong_x: Moment,
    pub weak_x: Moment,
    /// Momentum errors, underdamped schemes only.
    pub strong_p: Option<Moment>,
    pub weak_p: Option<Moment>,
    /// `weak_x + weak_p`.
    pub weak: Moment,
}

/// Log-log least-squares fit. `slope_se` propagates the Monte Carlo error of
/// each point through the fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub slope_se: f64,
}

impl SlopeFit {
    pub fn from_points(hs: &[f64], m: &[Moment]) -> Result<Self> {
        if hs.len() < 2 || hs.len() != m.len() {
            return Err(Error::Domain(
                "slope fit needs at least two matching points".into(),
            ));
        }
        if m.iter().any(|a| !(a.value > 0.0)) {
            return Err(Error::Domain("slope fit needs positive values".into()));
        }
        let x: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
        let y: Vec<f64> = m.iter().map(|a| a.value.ln()).collect();
        let (slope, intercept, r2) = ols(&x, &y);
        let mx = x.iter().sum::<f64>() / x.len() as f64;
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let var: f64 = x
            .iter()
            .zip(m)
            .map(|(a, p)| ((a - mx) / sxx).powi(2) * (p.se / p.value).powi(2))
            .sum();
        Ok(Self {
            slope,
            intercept,
            r2,
            slope_se: var.sqrt(),
        })
    }

    /// One-sided check: the slope minus `k` standard errors stays above `bound`.
    pub fn clears(&self, bound: f64, k: f64) -> bool {
        self.slope - k * self.slope_se >= bound
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalErrorReport {
    pub scheme: Scheme,
    pub points: Vec<LocalErrorPoint>,
    /// Fits are `None` when some error vanishes identically.
    pub strong_x: Option<SlopeFit>,
    pub weak_x: Option<SlopeFit>,
    pub strong_p: Option<SlopeFit>,
    pub weak_p: Option<SlopeFit>,
    pub weak: Option<SlopeFit>,
    /// True when the exact Gaussian coupling was used.
    pub exact_coupling: bool,
}

fn moment(samples: &[f64]) -> Moment {
    let n = samples.len() as f64;
    let value = pairwise_mean(samples);
    let var = samples.iter().map(|s| (s - value).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Moment {
        value,
        se: (var / n).sqrt(),
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 {
                1.0
            } else if n == 1 {
                z
            } else {
                p1
            };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = z;
        weights[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (nodes, weights)
}

/// `int_0^h k_a(s) k_b(s) ds` for kernels that are smooth between the given
/// breakpoints.
fn kernel_gram(
    h: f64,
    breaks: &[f64],
    kernels: &dyn Fn(f64, &mut [f64]),
    n: usize,
) -> DMatrix<f64> {
    let (z, w) = gauss_legendre(24);
    let mut pts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|b| *b > 0.0 && *b < h)
        .collect();
    pts.push(0.0);
    pts.push(h);
    pts.sort_by(|a, b| a.total_cmp(b));
    pts.dedup();
    let mut g = DMatrix::zeros(n, n);
    let mut k = vec![0.0; n];
    for seg in pts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let half = 0.5 * (b - a);
        for (zi, wi) in z.iter().zip(&w) {
            kernels(a + half * (zi + 1.0), &mut k);
            for i in 0..n {
                for j in 0..n {
                    g[(i, j)] += half * wi * k[i] * k[j];
                }
            }
        }
    }
    g
}

/// Diagonal curvature and `grad V(0)` of a quadratic with diagonal Hessian.
fn diagonal_quadratic(v: &PotentialModel) -> Result<(Vec<f64>, Vec<f64>)> {
    if !v.is_quadratic() {
        return Err(Error::Unsupported(
            "closed-form coupling needs a quadratic potential".into(),
        ));
    }
    let d = v.dim;
    let hess = v.hessian(&vec![0.0; d])?;
    for i in 0..d {
        for j in 0..d {
            if i != j && hess[(i, j)] != 0.0 {
                return Err(Error::Unsupported(
                    "closed-form coupling needs a diagonal Hessian".into(),
                ));
            }
        }
    }
    Ok((
        (0..d).map(|i| hess[(i, i)]).collect(),
        v.gradient(&vec![0.0; d])?,
    ))
}

fn sample_start(
    v: &PotentialModel,
    start: StartLaw,
    underdamped: bool,
    seed: u64,
    index: u64,
) -> Result<Vec<f64>> {
    let d = v.dim;
    let n = if underdamped { 2 * d } else { d };
    let mut z = vec![0.0; n];
    CellRng::new(seed, derive_stream(index, purpose::INITIAL, 0)).normals(0, &mut z);
    match start {
        StartLaw::Isotropic(s) => z.iter_mut().for_each(|a| *a *= s),
        StartLaw::Stationary => {
            let (lam, g0) = diagonal_quadratic(v)?;
            for i in 0..d {
                if !(lam[i] > 0.0) {
                    return Err(Error::Domain(
                        "stationary start needs a positive spectrum".into(),
                    ));
                }
                z[i] = -g0[i] / lam[i] + z[i] / lam[i].sqrt();
            }
        }
    }
    Ok(z)
}

/// Midpoint times `(tau-, tau+)` of one step; for single-midpoint schemes both
/// entries hold `tau`.
fn midpoints(spec: &SchemeSpec, h: f64, seed: u64, index: u64) -> Result<(f64, f64)> {
    let random = |level: u64| {
        CellRng::new(seed, derive_stream(index, purpose::SCHEDULE, level))
            .cell(0)
            .random_range(0.0..h)
    };
    Ok(match (spec.scheme, spec.schedule) {
        (Scheme::EmLd | Scheme::Ulmc, _) => (0.0, 0.0),
        (Scheme::Mlmc, MidpointSchedule::RandomizedUniform { .. }) => {
            let t = random(0);
            (t, t)
        }
        (Scheme::Mlmc, MidpointSchedule::DeterministicOd { fraction }) => {
            (fraction * h, fraction * h)
        }
        (Scheme::Mlmc, MidpointSchedule::DeterministicUd) => (0.5 * h, 0.5 * h),
        (Scheme::DmUlmc, MidpointSchedule::RandomizedUniform { .. }) => {
            let (a, b) = (random(0), random(1));
            (a.min(b), a.max(b))
        }
        (Scheme::DmUlmc, MidpointSchedule::DeterministicUd) => (h / 3.0, h / 2.0),
        (Scheme::DmUlmc, MidpointSchedule::DeterministicOd { fraction }) => {
            (fraction * h, fraction * h)
        }
    })
}

/// Coupled error of one step: `(dx, dp, mean dx, mean dp)` with the means
/// being the conditional ones given the start.
type StepErrors = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

/// Joint law of the scheme's stochastic integrals and the exact noise for one
/// `(h, tau-, tau+)`, per coordinate, plus the exact mean flow.
struct Coupling {
    h: f64,
    taus: (f64, f64),
    /// Square roots of the kernel Gram matrices.
    factors: Vec<DMatrix<f64>>,
    /// Row-major 2x2 flow (`[decay, 0, 0, 0]` when overdamped) and shift.
    phi: Vec<[f64; 4]>,
    shift: Vec<[f64; 2]>,
}

impl Coupling {
    fn new(lam: &[f64], g0: &[f64], gamma: Option<f64>, h: f64, taus: (f64, f64)) -> Result<Self> {
        let d = lam.len();
        let mut factors = Vec::with_capacity(d);
        let mut phi = Vec::with_capacity(d);
        let mut shift = Vec::with_capacity(d);
        for i in 0..d {
            let l = lam[i];
            match gamma {
                None => {
                    let sq2 = 2f64.sqrt();
                    let tau = taus.0;
                    let kern = |s: f64, out: &mut [f64]| {
                        out[0] = if s < tau { sq2 } else { 0.0 };
                        out[1] = sq2;
                        out[2] = sq2 * (-l * (h - s)).exp();
                    };
                    factors.push(psd_sqrt(&kernel_gram(h, &[tau], &kern, 3)));
                    let decay = (-l * h).exp();
                    let sh = if l.abs() < 1e-300 {
                        -g0[i] * h
                    } else {
                        -g0[i] * (1.0 - decay) / l
                    };
                    phi.push([decay, 0.0, 0.0, 0.0]);
                    shift.push([sh, 0.0]);
                }
                Some(gamma) => {
                    let e = ExpIntegrals::new(gamma)?;
                    let w = (2.0 * gamma).sqrt();
                    let a = Matrix2::new(0.0, 1.0, -l, -gamma);
                    let flow = |u: f64| (a * u).exp();
                    let kern = |s: f64, out: &mut [f64]| {
                        let f = flow(h - s);
                        out[0] = w * e.e2_len(h - s);
                        out[1] = w * e.e1_len(h - s);
                        out[2] = if s < taus.0 {
                            w * e.e2_len(taus.0 - s)
                        } else {
                            0.0
                        };
                        out[3] = if s < taus.1 {
                            w * e.e2_len(taus.1 - s)
                        } else {
                            0.0
                        };
                        out[4] = w * f[(0, 1)];
                        out[5] = w * f[(1, 1)];
                    };
                    factors.push(psd_sqrt(&kernel_gram(h, &[taus.0, taus.1], &kern, 6)));
                    // int_0^h e^{A(h-s)} (0, -g) ds
                    let one = |s: f64, out: &mut [f64]| {
                        let f = flow(h - s);
                        out[0] = f[(0, 1)];
                        out[1] = f[(1, 1)];
                    };
                    let (z, wq) = gauss_legendre(24);
                    let mut acc = [0.0; 2];
                    let mut k = [0.0; 2];
                    for (zn, wn) in z.iter().zip(&wq) {
                        one(0.5 * h * (zn + 1.0), &mut k);
                        acc[0] += 0.5 * h * wn * k[0] * -g0[i];
                        acc[1] += 0.5 * h * wn * k[1] * -g0[i];
                    }
                    let f = flow(h);
                    phi.push([f[(0, 0)], f[(0, 1)], f[(1, 0)], f[(1, 1)]]);
                    shift.push(acc);
                }
            }
        }
        Ok(Self {
            h,
            taus,
            factors,
            phi,
            shift,
        })
    }

    fn od_errors(&self, v: &PotentialModel, x0: &[f64], z: &[f64]) -> Result<StepErrors> {
        let d = v.dim;
        let (h, tau) = (self.h, self.taus.0);
        let run = |bt: &[f64], bh: &[f64]| -> Result<Vec<f64>> {
            let g = v.gradient(x0)?;
            let xp: Vec<f64> = (0..d).map(|k| x0[k] - tau * g[k] + bt[k]).collect();
            let gp = if tau == 0.0 { g } else { v.gradient(&xp)? };
            Ok((0..d).map(|k| x0[k] - h * gp[k] + bh[k]).collect())
        };
        let mut bt = vec![0.0; d];
        let mut bh = vec![0.0; d];
        let mut noise = vec![0.0; d];
        let mut mean = vec![0.0; d];
        for i in 0..d {
            let y = &self.factors[i] * DVector::from_column_slice(&z[3 * i..3 * i + 3]);
            bt[i] = y[0];
            bh[i] = y[1];
            noise[i] = y[2];
            mean[i] = self.phi[i][0] * x0[i] + self.shift[i][0];
        }
        let x_alg = run(&bt, &bh)?;
        let x_mean = run(&vec![0.0; d], &vec![0.0; d])?;
        let dx = (0..d).map(|i| x_alg[i] - mean[i] - noise[i]).collect();
        let mx = (0..d).map(|i| x_mean[i] - mean[i]).collect();
        Ok((dx, Vec::new(), mx, Vec::new()))
    }

    fn ud_errors(
        &self,
        v: &PotentialModel,
        gamma: f64,
        x0: &[f64],
        p0: &[f64],
        z: &[f64],
    ) -> Result<StepErrors> {
        let d = v.dim;
        let c = UdCoefficients::new(gamma, self.h, self.taus.0, self.taus.1)?;
        let mut noise = UdNoise::zeros(d);
        let mut exact = vec![0.0; 2 * d];
        let mut mean = vec![0.0; 2 * d];
        for i in 0..d {
            let y = &self.factors[i] * DVector::from_column_slice(&z[6 * i..6 * i + 6]);
            noise.nx[i] = y[0];
            noise.np[i] = y[1];
            noise.n_minus[i] = y[2];
            noise.n_plus[i] = y[3];
            let f = &self.phi[i];
            mean[i] = f[0] * x0[i] + f[1] * p0[i] + self.shift[i][0];
            mean[d + i] = f[2] * x0[i] + f[3] * p0[i] + self.shift[i][1];
            exact[i] = mean[i] + y[4];
            exact[d + i] = mean[d + i] + y[5];
        }
        let alg = dmulmc_marginal(v, &c, x0, p0, &noise)?;
        let zero = dmulmc_marginal(v, &c, x0, p0, &UdNoise::zeros(d))?;
        Ok((
            (0..d).map(|k| alg.x[k] - exact[k]).collect(),
            (0..d).map(|k| alg.p[k] - exact[d + k]).collect(),
            (0..d).map(|k| zero.x[k] - mean[k]).collect(),
            (0..d).map(|k| zero.p[k] - mean[d + k]).collect(),
        ))
    }
}

fn grid_errors(
    cfg: &LocalErrorConfig,
    v: &PotentialModel,
    state0: &[f64],
    h: f64,
    index: u64,
    copy: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = v.dim;
    let grid = TimeGrid::new(h, 1, REFERENCE_CELLS)?;
    let path = NoisePath::sample(grid, d, cfg.seed, 2 * index + copy)?;
    let mut spec = cfg.spec;
    if let MidpointSchedule::RandomizedUniform { seed, .. } = spec.schedule {
        spec.schedule = MidpointSchedule::RandomizedUniform {
            seed,
            stream: 2 * index + copy,
        };
    }
    let fin = simulate(&spec, v, state0, &path)?.final_state();
    if spec.scheme.is_underdamped() {
        let (x, p) = ud_reference(v, spec.gamma, &state0[..d], &state0[d..], &path)?;
        Ok((
            (0..d).map(|k| fin[k] - x[k]).collect(),
            (0..d).map(|k| fin[d + k] - p[k]).collect(),
        ))
    } else {
        let r = em_ld_reference(v, state0, &path)?;
        let x = &r[r.len() - d..];
        Ok(((0..d).map(|k| fin[k] - x[k]).collect(), Vec::new()))
    }
}

fn sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Strong and weak one-step errors over an `h` sweep, with log-log slopes.
pub fn local_error_sweep(cfg: &LocalErrorConfig, v: &PotentialModel) -> Result<LocalErrorReport> {
    if cfg.hs.len() < 4 {
        return Err(Error::Domain(
            "a local-error sweep needs at least four step sizes".into(),
        ));
    }
    if cfg.n_paths < 2 {
        return Err(Error::Domain(
            "a local-error sweep needs at least two paths".into(),
        ));
    }
    let d = v.dim;
    let ud = cfg.spec.scheme.is_underdamped();
    let closed = diagonal_quadratic(v).ok();
    let gamma = ud.then_some(cfg.spec.gamma);
    let random = matches!(
        cfg.spec.schedule,
        MidpointSchedule::RandomizedUniform { .. }
    ) && matches!(cfg.spec.scheme, Scheme::Mlmc | Scheme::DmUlmc);
    let mut points = Vec::with_capacity(cfg.hs.len());
    for &h in &cfg.hs {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Domain(format!("step size {h} must be positive")));
        }
        // deterministic midpoints share one coupling across paths
        let fixed = match &closed {
            Some((lam, g0)) if !random => Some(Coupling::new(
                lam,
                g0,
                gamma,
                h,
                midpoints(&cfg.spec, h, cfg.seed, 0)?,
            )?),
            _ => None,
        };
        let rows = run_indexed(cfg.n_paths, cfg.threads, |i| -> Result<[f64; 4]> {
            let idx = i as u64;
            let s0 = sample_start(v, cfg.start, ud, cfg.seed, idx)?;
            match &closed {
                Some((lam, g0)) => {
                    let k = if ud { 6 } else { 3 };
                    let mut z = vec![0.0; k * d];
                    CellRng::new(cfg.seed, derive_stream(idx, purpose::NOISE, 0))
                        .normals(0, &mut z);
                    let own;
                    let c = match &fixed {
                        Some(c) => c,
                        None => {
                            let taus = midpoints(&cfg.spec, h, cfg.seed, idx)?;
                            own = Coupling::new(lam, g0, gamma, h, taus)?;
                            &own
                        }
                    };
                    let (dx, dp, mx, mp) = if ud {
                        c.ud_errors(v, cfg.spec.gamma, &s0[..d], &s0[d..], &z)?
                    } else {
                        c.od_errors(v, &s0, &z)?
                    };
                    Ok([sq(&dx), sq(&dp), sq(&mx), sq(&mp)])
                }
                None => {
                    // E<D1, D2> over two independent paths is the squared
                    // conditional mean, without nesting.
                    let (ax, ap) = grid_errors(cfg, v, &s0, h, idx, 0)?;
                    let (bx, bp) = grid_errors(cfg, v, &s0, h, idx, 1)?;
                    let wx: f64 = ax.iter().zip(&bx).map(|(a, b)| a * b).sum();
                    let wp: f64 = ap.iter().zip(&bp).map(|(a, b)| a * b).sum();
                    Ok([0.5 * (sq(&ax) + sq(&bx)), 0.5 * (sq(&ap) + sq(&bp)), wx, wp])
                }
            }
        })?;
        let rows: Vec<[f64; 4]> = rows.into_iter().collect::<Result<_>>()?;
        let col = |j: usize| moment(&rows.iter().map(|r| r[j]).collect::<Vec<_>>());
        let weak_sum = moment(&rows.iter().map(|r| r[2] + r[3]).collect::<Vec<_>>());
        points.push(LocalErrorPoint {
            h,
            strong_x: col(0),
            weak_x: col(2),
            strong_p: ud.then(|| col(1)),
            weak_p: ud.then(|| col(3)),
            weak: weak_sum,
        });
    }
    let hs: Vec<f64> = points.iter().map(|p| p.h).collect();
    let fit = |f: &dyn Fn(&LocalErrorPoint) -> Option<Moment>| -> Option<SlopeFit> {
        let m: Option<Vec<Moment>> = points.iter().map(f).collect();
        m.and_then(|m| SlopeFit::from_points(&hs, &m).ok())
    };
    Ok(LocalErrorReport {
        scheme: cfg.spec.scheme,
        strong_x: fit(&|p| Some(p.strong_x)),
        weak_x: fit(&|p| Some(p.weak_x)),
        strong_p: fit(&|p| p.strong_p),
        weak_p: fit(&|p| p.weak_p),
        weak: fit(&|p| Some(p.weak)),
        exact_coupling: closed.is_some(),
        points,
    })
}
