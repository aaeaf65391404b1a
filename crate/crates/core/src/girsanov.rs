//! Anticipating drifts, their Malliavin derivatives and the resulting
//! change-of-measure weights.
//!
//! Convention: the reference discretization driven by `xi + psi` reproduces
//! the scheme's inner-grid interpolation driven by `xi`. The weight `M`
//! satisfies `E_P[M f] = E_Q[f]` where under `Q` the shifted noise is standard.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::NoisePath;
use crate::linalg::{dot, log_abs_det, pairwise_sum, spectral_radius_estimate};
use crate::overdamped::{mlmc_interpolant, mlmc_step};
use crate::potential::PotentialModel;
use crate::scheme::{SchemeSpec, Trajectory};
use crate::underdamped::{
    dmulmc_marginal, solve_dmulmc_interpolation, Interpolation, UdNoise, UdSetup, UdStep,
};

/// Fixed-point controls for the underdamped interpolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100,
        }
    }
}

/// Derivatives of one outer step. Columns index the step's noise cells
/// (`m d`), rows of `dpsi_*` index the step's drift cells (`m d`). The state
/// is `x` (overdamped) or `(x, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepJacobian {
    /// Matrix sharing trace, nonzero spectrum and `det(I + q D)` with the
    /// diagonal block `D`: the block itself for overdamped steps, a `2d x 2d`
    /// reduction for underdamped ones.
    pub core: DMatrix<f64>,
    pub dpsi_dxi: Option<DMatrix<f64>>,
    pub dpsi_dstate: Option<DMatrix<f64>>,
    pub dnext_dxi: Option<DMatrix<f64>>,
    pub dnext_dstate: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepAnalysis {
    /// Drift, row-major `m x d`.
    pub psi: Vec<f64>,
    pub jac: StepJacobian,
    /// Fixed-point iterations (underdamped only).
    pub iterations: usize,
}

fn block_set(a: &mut DMatrix<f64>, r: usize, c: usize, b: &DMatrix<f64>) {
    a.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
}

/// Drift and derivatives of one M-LMC step (EM-LD when `t = 0`):
/// `psi_i = sqrt(eta/2) (grad V(X_i) - grad V(X+))`.
pub fn analyze_od_step(
    v: &PotentialModel,
    x0: &[f64],
    xi: &[f64],
    eta: f64,
    t: usize,
    detail: Detail,
) -> Result<StepAnalysis> {
    let d = v.dim;
    let m = xi.len() / d;
    let st = mlmc_step(v, x0, xi, eta, t)?;
    let xs = mlmc_interpolant(v, x0, &st.x_plus, xi, eta)?;
    let gp = v.gradient(&st.x_plus)?;
    let hp = v.hessian(&st.x_plus)?;
    let c = (eta / 2.0).sqrt();
    let mut psi = vec![0.0; m * d];
    let mut hs = Vec::with_capacity(m);
    let mut g = vec![0.0; d];
    for i in 0..m {
        let xi_pt = &xs[i * d..(i + 1) * d];
        v.gradient_into(xi_pt, &mut g)?;
        for k in 0..d {
            psi[i * d + k] = c * (g[k] - gp[k]);
        }
        hs.push(if i == 0 {
            v.hessian(x0)?
        } else {
            v.hessian(xi_pt)?
        });
    }
    // D_j psi_i = eta [H_i 1{j<i} - (i eta H_i H+ + H+) 1{j<t}]
    let mut dpsi = DMatrix::zeros(m * d, m * d);
    for i in 0..m {
        let hi = &hs[i] * eta;
        let pi = (&hs[i] * &hp * (i as f64 * eta) + &hp) * (-eta);
        for j in 0..m {
            let mut b = DMatrix::zeros(d, d);
            if j < i {
                b += &hi;
            }
            if j < t {
                b += &pi;
            }
            if j < i || j < t {
                block_set(&mut dpsi, i * d, j * d, &b);
            }
        }
    }
    let full = if detail >= Detail::Diagonal {
        Some(dpsi.clone())
    } else {
        None
    };
    let mut jac = StepJacobian {
        core: dpsi,
        dpsi_dxi: full,
        dpsi_dstate: None,
        dnext_dxi: None,
        dnext_dstate: None,
    };
    if detail == Detail::Full {
        let id = DMatrix::<f64>::identity(d, d);
        let tau = t as f64 * eta;
        let h = m as f64 * eta;
        let jp = &id - &hs[0] * tau;
        let hpjp = &hp * &jp;
        let mut ds = DMatrix::zeros(m * d, d);
        for i in 0..m {
            let b = (&hs[i] * (&id - &hpjp * (i as f64 * eta)) - &hpjp) * c;
            block_set(&mut ds, i * d, 0, &b);
        }
        let s2 = (2.0 * eta).sqrt();
        let mut nx = DMatrix::zeros(d, m * d);
        for j in 0..m {
            let b = if j < t {
                (&id - &hp * h) * s2
            } else {
                &id * s2
            };
            block_set(&mut nx, 0, j * d, &b);
        }
        jac.dpsi_dstate = Some(ds);
        jac.dnext_dxi = Some(nx);
        jac.dnext_dstate = Some(&id - hpjp * h);
    }
    Ok(StepAnalysis {
        psi,
        jac,
        iterations: 0,
    })
}

/// Tangent of the underdamped interpolation: given directional inputs for
/// every noise cell and for the state, returns the multiplier tangent
/// (`2d x nc`) and the tangent of the step's end state (`2d x nc`).
/// `y += a x`
fn madd(y: &mut DMatrix<f64>, a: f64, x: &DMatrix<f64>) {
    let (y, x) = (y.as_mut_slice(), x.as_slice());
    assert_eq!(y.len(), x.len());
    for i in 0..y.len() {
        y[i] += a * x[i];
    }
}

/// `out = a b` for small column-major matrices, without the generic gemm
/// dispatch that dominates at these sizes.
fn small_mul(out: &mut DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) {
    let (n, k) = a.shape();
    let c = b.ncols();
    let (a, b, o) = (a.as_slice(), b.as_slice(), out.as_mut_slice());
    assert!(a.len() == n * k && b.len() == k * c && o.len() == n * c);
    for j in 0..c {
        for r in 0..n {
            let mut acc = 0.0;
            for l in 0..k {
                acc += a[l * n + r] * b[j * k + l];
            }
            o[j * n + r] = acc;
        }
    }
}

struct UdLinearization<'a> {
    s: &'a UdSetup,
    d: usize,
    h0: DMatrix<f64>,
    hm: DMatrix<f64>,
    hp: DMatrix<f64>,
    hs: Option<Vec<DMatrix<f64>>>,
    /// `(I - K)^{-1}` and the Gram inverse entries.
    solve: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    ginv: (f64, f64, f64),
}

impl<'a> UdLinearization<'a> {
    fn new(
        v: &PotentialModel,
        s: &'a UdSetup,
        x0: &[f64],
        it: &Interpolation,
        st: &UdStep,
    ) -> Result<Self> {
        let d = v.dim;
        let m = s.m;
        let h0 = v.hessian(x0)?;
        let hm = v.hessian(&st.x_minus)?;
        let hp = v.hessian(&st.x_plus)?;
        // constant Hessian: skip the per-cell evaluations
        let hs: Option<Vec<DMatrix<f64>>> = if v.is_quadratic() {
            None
        } else {
            Some(
                (0..m)
                    .map(|k| {
                        if k == 0 {
                            Ok(h0.clone())
                        } else {
                            v.hessian(&it.x_hat[k * d..(k + 1) * d])
                        }
                    })
                    .collect::<Result<_>>()?,
            )
        };
        let hess = |k: usize| hs.as_ref().map_or(&h0, |h| &h[k]);
        let [ga, gb, gc] = s.gram;
        let gd = s.gram_det;
        let ginv = (gc / gd, -gb / gd, ga / gd);
        // response of the moment functionals to unit multipliers
        let mut zx = DMatrix::zeros(d, 2 * d);
        let mut zp = DMatrix::zeros(d, 2 * d);
        let mut fz1 = DMatrix::zeros(d, 2 * d);
        let mut fz2 = DMatrix::zeros(d, 2 * d);
        let mut g = DMatrix::zeros(d, 2 * d);
        for k in 0..m {
            small_mul(&mut g, hess(k), &zx);
            madd(&mut fz1, s.eta * s.e1[k], &g);
            madd(&mut fz2, s.eta * s.e2[k], &g);
            for r in 0..d {
                g[(r, r)] -= s.e1[k];
                g[(r, d + r)] -= s.e2[k];
            }
            // kick = zp - eta g, then flow
            madd(&mut zp, -s.eta, &g);
            madd(&mut zx, s.c2, &zp);
            zp *= s.c1;
        }
        let mut kmat = DMatrix::zeros(2 * d, 2 * d);
        block_set(&mut kmat, 0, 0, &(&fz1 * ginv.0 + &fz2 * ginv.1));
        block_set(&mut kmat, d, 0, &(&fz1 * ginv.1 + &fz2 * ginv.2));
        let rho = kmat
            .complex_eigenvalues()
            .iter()
            .fold(0.0f64, |a, z| a.max(z.norm()));
        if rho >= 1.0 {
            return Err(Error::StepSize(format!(
                "linearized interpolation is not contractive (rate {rho:.3}) at h = {}; requires h <~ 1/sqrt(beta)",
                s.coef.h
            )));
        }
        let solve = (DMatrix::<f64>::identity(2 * d, 2 * d) - kmat).lu();
        Ok(Self {
            s,
            d,
            h0,
            hm,
            hp,
            hs,
            solve,
            ginv,
        })
    }

    /// `dxi(k, out)` writes the `d x nc` input direction of cell `k`.
    fn apply(
        &self,
        nc: usize,
        dxi: &dyn Fn(usize, &mut DMatrix<f64>),
        dx0: &DMatrix<f64>,
        dp0: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (s, d) = (self.s, self.d);
        let mut dxm = dx0 - &self.h0 * dx0 * s.coef.e3_minus + dp0 * s.coef.e2_minus;
        let mut dxp = dx0 - &self.h0 * dx0 * s.coef.e3_plus + dp0 * s.coef.e2_plus;
        let mut dx = dx0.clone();
        let mut dp = dp0.clone();
        let mut fy1 = DMatrix::zeros(d, nc);
        let mut fy2 = DMatrix::zeros(d, nc);
        let mut hx = DMatrix::zeros(d, nc);
        let mut input = DMatrix::zeros(d, nc);
        let mut nx = dx0 + dp0 * s.coef.e2h;
        let mut np = dp0 * s.coef.e1h;
        for k in 0..s.m {
            dxi(k, &mut input);
            if k < s.t_minus {
                madd(&mut dxm, s.w * s.k_minus[k], &input);
            }
            if k < s.t_plus {
                madd(&mut dxp, s.w * s.k_plus[k], &input);
            }
            let hk = self.hs.as_ref().map_or(&self.h0, |h| &h[k]);
            small_mul(&mut hx, hk, &dx);
            madd(&mut fy1, s.eta * s.e1[k], &hx);
            madd(&mut fy2, s.eta * s.e2[k], &hx);
            // kick = dp - eta H dx + w input, then flow
            madd(&mut dp, -s.eta, &hx);
            madd(&mut dp, s.w, &input);
            madd(&mut dx, s.c2, &dp);
            dp *= s.c1;
            madd(&mut nx, s.w * s.e2[k], &input);
            madd(&mut np, s.w * s.e1[k], &input);
        }
        nx -= (&self.hm * &dxm) * s.coef.e3h;
        np -= (&self.hp * &dxp) * s.coef.g2h;
        let ry1 = fy1 - (&self.hp * &dxp) * s.coef.g2h;
        let ry2 = fy2 - (&self.hm * &dxm) * s.coef.e3h;
        let (i11, i12, i22) = self.ginv;
        let mut rhs = DMatrix::zeros(2 * d, nc);
        block_set(&mut rhs, 0, 0, &(&ry1 * i11 + &ry2 * i12));
        block_set(&mut rhs, d, 0, &(&ry1 * i12 + &ry2 * i22));
        let dl = self
            .solve
            .solve(&rhs)
            .ok_or_else(|| Error::StepSize("singular multiplier system".into()))?;
        let mut next = DMatrix::zeros(2 * d, nc);
        block_set(&mut next, 0, 0, &nx);
        block_set(&mut next, d, 0, &np);
        Ok((dl, next))
    }
}

/// How much of the step derivative to materialize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Detail {
    /// Only what the weight needs (trace, determinant, spectrum).
    Core,
    /// Also the dense diagonal block.
    Diagonal,
    /// Also the state sensitivities used for off-diagonal blocks.
    Full,
}

/// Drift and derivatives of one underdamped step from its interpolation:
/// `psi_j = sqrt(eta/(2 gamma)) (E1(j eta, h) l1 + E2(j eta, h) l2)`.
///
/// The diagonal block is `U V` with `U` the `m d x 2d` kernel matrix and
/// `V` the multiplier derivative, so its core is the `2d x 2d` matrix `V U`.
pub fn analyze_ud_step(
    v: &PotentialModel,
    s: &UdSetup,
    x0: &[f64],
    p0: &[f64],
    xi: &[f64],
    opts: SolverOptions,
    detail: Detail,
) -> Result<(StepAnalysis, Interpolation, UdStep)> {
    let d = v.dim;
    let m = s.m;
    let gamma = s.coef.gamma;
    let noise = UdNoise::from_cells(s, xi, d);
    let st = dmulmc_marginal(v, &s.coef, x0, p0, &noise)?;
    let it = solve_dmulmc_interpolation(v, s, x0, p0, xi, &st, opts.tol, opts.max_iter)?;
    let cpsi = (s.eta / (2.0 * gamma)).sqrt();
    let mut psi = vec![0.0; m * d];
    for j in 0..m {
        for k in 0..d {
            psi[j * d + k] = cpsi * (s.e1[j] * it.lambda1[k] + s.e2[j] * it.lambda2[k]);
        }
    }
    let lin = UdLinearization::new(v, s, x0, &it, &st)?;
    let id = DMatrix::<f64>::identity(d, d);
    // directions along the columns of U
    let u_dir = |k: usize, a: &mut DMatrix<f64>| {
        for r in 0..d {
            a[(r, r)] = cpsi * s.e1[k];
            a[(r, d + r)] = cpsi * s.e2[k];
        }
    };
    let z2 = DMatrix::zeros(d, 2 * d);
    let (core, _) = lin.apply(2 * d, &u_dir, &z2, &z2)?;
    let mut jac = StepJacobian {
        core,
        dpsi_dxi: None,
        dpsi_dstate: None,
        dnext_dxi: None,
        dnext_dstate: None,
    };
    if detail >= Detail::Diagonal {
        let md = m * d;
        let nc = if detail == Detail::Full {
            md + 2 * d
        } else {
            md
        };
        let sel = |k: usize, a: &mut DMatrix<f64>| {
            a.fill(0.0);
            block_set(a, 0, k * d, &id);
        };
        let mut dx0 = DMatrix::zeros(d, nc);
        let mut dp0 = DMatrix::zeros(d, nc);
        if detail == Detail::Full {
            block_set(&mut dx0, 0, md, &id);
            block_set(&mut dp0, 0, md + d, &id);
        }
        let (dl, next) = lin.apply(nc, &sel, &dx0, &dp0)?;
        let mut dpsi = DMatrix::zeros(md, nc);
        for j in 0..m {
            let b = (dl.rows(0, d) * s.e1[j] + dl.rows(d, d) * s.e2[j]) * cpsi;
            block_set(&mut dpsi, j * d, 0, &b);
        }
        jac.dpsi_dxi = Some(dpsi.columns(0, md).into_owned());
        if detail == Detail::Full {
            jac.dpsi_dstate = Some(dpsi.columns(md, 2 * d).into_owned());
            jac.dnext_dxi = Some(next.columns(0, md).into_owned());
            jac.dnext_dstate = Some(next.columns(md, 2 * d).into_owned());
        }
    }
    let iterations = it.iterations;
    Ok((
        StepAnalysis {
            psi,
            jac,
            iterations,
        },
        it,
        st,
    ))
}

/// Per-step drifts and derivatives along a whole path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathAnalysis {
    pub trajectory: Trajectory,
    pub steps: Vec<StepAnalysis>,
}

pub fn analyze_path(
    spec: &SchemeSpec,
    v: &PotentialModel,
    state0: &[f64],
    path: &NoisePath,
    opts: SolverOptions,
    detail: Detail,
) -> Result<PathAnalysis> {
    let grid = path.grid;
    let traj = crate::scheme::simulate(spec, v, state0, path)?;
    let mut steps = Vec::with_capacity(grid.n_steps);
    match &traj {
        Trajectory::Od(t) => {
            for k in 0..grid.n_steps {
                steps.push(analyze_od_step(
                    v,
                    t.state(k),
                    path.step(k),
                    grid.eta(),
                    t.t_index[k],
                    detail,
                )?);
            }
        }
        Trajectory::Ud(t) => {
            let mut setup: Option<UdSetup> = None;
            for k in 0..grid.n_steps {
                let (tm, tp) = t.t_index[k];
                if !matches!(&setup, Some(s) if (s.t_minus, s.t_plus) == (tm, tp)) {
                    setup = Some(UdSetup::new(spec.gamma, &grid, tm, tp)?);
                }
                let s = setup.as_ref().expect("set above");
                let (x0, p0) = t.state(k);
                let (a, _, _) = analyze_ud_step(v, s, x0, p0, path.step(k), opts, detail)?;
                steps.push(a);
            }
        }
    }
    Ok(PathAnalysis {
        trajectory: traj,
        steps,
    })
}

/// Diagonal blocks of the Malliavin matrix of the drift, plus strictly
/// lower off-diagonal blocks when they were requested.
#[derive(Debug, Clone, PartialEq)]
pub struct MalliavinBlocks {
    pub diag: Vec<DMatrix<f64>>,
    /// `off[k][l]` for `l < k`: derivative of step `k`'s drift with respect
    /// to step `l`'s noise.
    pub off: Option<Vec<Vec<DMatrix<f64>>>>,
}

impl MalliavinBlocks {
    pub fn from_steps(steps: &[StepAnalysis], with_off: bool) -> Result<Self> {
        let missing = || Error::Unsupported("dense blocks were not computed".into());
        let diag = steps
            .iter()
            .map(|s| s.jac.dpsi_dxi.clone().ok_or_else(missing))
            .collect::<Result<_>>()?;
        if !with_off {
            return Ok(Self { diag, off: None });
        }
        let n = steps.len();
        let mut off: Vec<Vec<DMatrix<f64>>> = (0..n).map(|_| Vec::new()).collect();
        for l in 0..n {
            // sensitivity of the state entering step l+1 to step l's noise
            let mut g = steps[l].jac.dnext_dxi.clone().ok_or_else(missing)?;
            for k in l + 1..n {
                let ds = steps[k].jac.dpsi_dstate.as_ref().ok_or_else(missing)?;
                off[k].push(ds * &g);
                let dn = steps[k].jac.dnext_dstate.as_ref().ok_or_else(missing)?;
                g = dn * g;
            }
        }
        Ok(Self {
            diag,
            off: Some(off),
        })
    }

    /// Dense `(N m d)^2` matrix (off-diagonal blocks zero if absent).
    pub fn dense(&self) -> DMatrix<f64> {
        let b = self.diag.first().map(|a| a.nrows()).unwrap_or(0);
        let n = self.diag.len();
        let mut out = DMatrix::zeros(n * b, n * b);
        for (k, a) in self.diag.iter().enumerate() {
            block_set(&mut out, k * b, k * b, a);
        }
        if let Some(off) = &self.off {
            for (k, row) in off.iter().enumerate() {
                for (l, a) in row.iter().enumerate() {
                    block_set(&mut out, k * b, l * b, a);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogWeight {
    /// `sum_k [log|det(I + q D_k)| - q tr D_k]`
    pub log_cf_det: f64,
    /// `sum <psi, xi> - sum_k tr D_k`
    pub skorohod: f64,
    /// `1/2 sum |psi|^2`
    pub energy: f64,
    pub log_weight: f64,
    pub invertible: bool,
    /// Largest spectral-radius estimate over the blocks of `q D_k`.
    pub max_radius: f64,
    /// Negative determinants in blocks whose radius estimate was below 0.9.
    pub anomalies: usize,
}

pub const RADIUS_THRESHOLD: f64 = 0.9;
const POWER_ITERS: usize = 20;

/// Regularized determinant of one block, `log|det(I + q D)| - q tr D`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfDet {
    pub log_det: f64,
    /// Sign of `det(I + q D)`, zero when singular.
    pub sign: f64,
    /// Power-iteration estimate of the spectral radius of `q D`.
    pub radius: f64,
}

pub fn carleman_fredholm(d: &DMatrix<f64>, q: f64) -> CfDet {
    let n = d.nrows();
    let qd = d * q;
    let radius = spectral_radius_estimate(&qd, POWER_ITERS);
    let (ld, sign) = log_abs_det(DMatrix::identity(n, n) + &qd);
    CfDet { log_det: ld - q * d.trace(), sign, radius }
}

/// Skorohod integral of a drift with Malliavin trace `trace`:
/// `sum <psi_i, xi_i> - trace`.
pub fn skorohod(psi: &[f64], xi: &[f64], trace: f64) -> f64 {
    dot(psi, xi) - trace
}

/// `log M` for the tilt `q psi`: `log_cf_det - q skorohod - q^2 energy`.
pub fn weight_from_steps(steps: &[StepAnalysis], path: &NoisePath, q: f64) -> LogWeight {
    let mut cf = Vec::with_capacity(steps.len());
    let mut sk = Vec::with_capacity(steps.len());
    let mut en = Vec::with_capacity(steps.len());
    let mut invertible = true;
    let mut max_radius = 0.0f64;
    let mut anomalies = 0;
    for (k, st) in steps.iter().enumerate() {
        let c = carleman_fredholm(&st.jac.core, q);
        max_radius = max_radius.max(c.radius);
        if c.sign == 0.0 || c.radius >= 1.0 {
            invertible = false;
        }
        if c.sign < 0.0 && c.radius < RADIUS_THRESHOLD {
            anomalies += 1;
        }
        cf.push(c.log_det);
        sk.push(skorohod(&st.psi, path.step(k), st.jac.core.trace()));
        en.push(0.5 * dot(&st.psi, &st.psi));
    }
    let log_cf_det = pairwise_sum(&cf);
    let skorohod = pairwise_sum(&sk);
    let energy = pairwise_sum(&en);
    LogWeight {
        log_cf_det,
        skorohod,
        energy,
        log_weight: log_cf_det - q * skorohod - q * q * energy,
        invertible,
        max_radius,
        anomalies,
    }
}

/// Log weight of one path for the tilt `q psi` (`q = 1` is `dQ/dP`).
pub fn log_weight(
    spec: &SchemeSpec,
    v: &PotentialModel,
    state0: &[f64],
    path: &NoisePath,
    q: f64,
) -> Result<LogWeight> {
    let a = analyze_path(
        spec,
        v,
        state0,
        path,
        SolverOptions::default(),
        Detail::Core,
    )?;
    Ok(weight_from_steps(&a.steps, path, q))
}

/// Discrete trace statistics of one M-LMC step and their continuous limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceDiagnostics {
    /// Trace of the square of the adapted part; zero by strict triangularity.
    pub tr_a2: f64,
    /// `sum_{j<t} 2 eta^2 j tr(H+ H_j)`
    pub cross: f64,
    /// `2 eta^2 t (t - 1) tr(H+^2)`
    pub rank_one: f64,
    /// `2 int_0^tau s tr(H+ H(X_s)) ds` by the trapezoid rule on the grid.
    pub cross_limit: f64,
    /// `2 tau^2 tr(H+^2)`
    pub rank_one_limit: f64,
}

pub fn od_trace_diagnostics(
    v: &PotentialModel,
    x0: &[f64],
    xi: &[f64],
    eta: f64,
    t: usize,
) -> Result<TraceDiagnostics> {
    let d = v.dim;
    let st = mlmc_step(v, x0, xi, eta, t)?;
    let xs = mlmc_interpolant(v, x0, &st.x_plus, xi, eta)?;
    let hp = v.hessian(&st.x_plus)?;
    let m = xi.len() / d;
    // adapted part: eta H_i 1{j<i}, strictly lower triangular in time
    let mut a = DMatrix::zeros(m * d, m * d);
    let mut f = Vec::with_capacity(t + 1);
    for i in 0..m {
        let hi = v.hessian(&xs[i * d..(i + 1) * d])?;
        if i <= t {
            f.push((&hp * &hi).trace());
        }
        for j in 0..i {
            block_set(&mut a, i * d, j * d, &(&hi * eta));
        }
    }
    if t == m {
        let hi = v.hessian(&xs[m * d..])?;
        f.push((&hp * &hi).trace());
    }
    let tr_a2 = (&a * &a).trace();
    let cross = (0..t).map(|j| 2.0 * eta * eta * j as f64 * f[j]).sum();
    let mut cross_limit = 0.0;
    for j in 0..t {
        let (s0, s1) = (j as f64 * eta, (j + 1) as f64 * eta);
        cross_limit += eta * (s0 * f[j] + s1 * f[j + 1]);
    }
    let trhp2 = (&hp * &hp).trace();
    let tau = t as f64 * eta;
    Ok(TraceDiagnostics {
        tr_a2,
        cross,
        rank_one: 2.0 * eta * eta * t as f64 * (t as f64 - 1.0).max(0.0) * trhp2,
        cross_limit,
        rank_one_limit: 2.0 * tau * tau * trhp2,
    })
}

/// Drift of the whole path, row-major `(N m) x d`.
pub fn path_drift(a: &PathAnalysis) -> Vec<f64> {
    a.steps.iter().flat_map(|s| s.psi.iter().cloned()).collect()
}
