//! Underdamped schemes: exponential-integrator ULMC, the two-midpoint
//! DM-ULMC marginal update and its inner-grid interpolation.

use crate::error::{Error, Result};
use crate::expint::ExpIntegrals;
use crate::grid::{MidpointSchedule, NoisePath, TimeGrid};
use crate::potential::PotentialModel;

/// Kernel values of one outer step with midpoints `tau_minus <= tau_plus`.
#[derive(Debug, Clone, PartialEq)]
pub struct UdCoefficients {
    pub gamma: f64,
    pub h: f64,
    pub tau_minus: f64,
    pub tau_plus: f64,
    pub e1h: f64,
    pub e2h: f64,
    /// Weights of the gradient terms. These equal `E3(h)`, `E2(h)`,
    /// `E3(tau-)`, `E3(tau+)` for the continuous scheme; on an inner grid they
    /// are replaced by the matching left-endpoint sums.
    pub e3h: f64,
    pub g2h: f64,
    pub e2_minus: f64,
    pub e3_minus: f64,
    pub e2_plus: f64,
    pub e3_plus: f64,
}

impl UdCoefficients {
    pub fn new(gamma: f64, h: f64, tau_minus: f64, tau_plus: f64) -> Result<Self> {
        let e = ExpIntegrals::new(gamma)?;
        if !(h > 0.0 && (0.0..=h).contains(&tau_minus) && (0.0..=h).contains(&tau_plus)) {
            return Err(Error::Domain(format!(
                "midpoints ({tau_minus}, {tau_plus}) must lie in [0, h = {h}]"
            )));
        }
        Ok(Self {
            gamma,
            h,
            tau_minus,
            tau_plus,
            e1h: e.e1_len(h),
            e2h: e.e2_len(h),
            e3h: e.e3_len(h),
            g2h: e.e2_len(h),
            e2_minus: e.e2_len(tau_minus),
            e3_minus: e.e3_len(tau_minus),
            e2_plus: e.e2_len(tau_plus),
            e3_plus: e.e3_len(tau_plus),
        })
    }
}

/// Coefficients tied to the inner grid of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct UdSetup {
    pub coef: UdCoefficients,
    pub m: usize,
    pub eta: f64,
    pub t_minus: usize,
    pub t_plus: usize,
    /// Free-flow coefficients of one cell.
    pub c1: f64,
    pub c2: f64,
    /// `sqrt(2 gamma eta)`
    pub w: f64,
    /// `E1(k eta, h)` and `E2(k eta, h)` for `k < m`.
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
    /// `E2(j eta, tau-)` for `j < t-`, and likewise for `tau+`.
    pub k_minus: Vec<f64>,
    pub k_plus: Vec<f64>,
    /// Discrete Gram `sum_k eta E_a E_b`, ordered `(11, 12, 22)`.
    pub gram: [f64; 3],
    pub gram_det: f64,
}

impl UdSetup {
    pub fn new(gamma: f64, grid: &TimeGrid, t_minus: usize, t_plus: usize) -> Result<Self> {
        let m = grid.m;
        let eta = grid.eta();
        let h = grid.h();
        if t_minus > m || t_plus > m {
            return Err(Error::GridMismatch("midpoint index beyond the step".into()));
        }
        let mut coef = UdCoefficients::new(gamma, h, t_minus as f64 * eta, t_plus as f64 * eta)?;
        let e = ExpIntegrals::new(gamma)?;
        let e1: Vec<f64> = (0..m).map(|k| e.e1_len(h - k as f64 * eta)).collect();
        let e2: Vec<f64> = (0..m).map(|k| e.e2_len(h - k as f64 * eta)).collect();
        let k_minus: Vec<f64> = (0..t_minus)
            .map(|j| e.e2_len((t_minus - j) as f64 * eta))
            .collect();
        let k_plus: Vec<f64> = (0..t_plus)
            .map(|j| e.e2_len((t_plus - j) as f64 * eta))
            .collect();
        // gradient weights as the inner reference sees them
        coef.e3h = eta * e2.iter().sum::<f64>();
        coef.g2h = eta * e1.iter().sum::<f64>();
        coef.e3_minus = eta * k_minus.iter().sum::<f64>();
        coef.e3_plus = eta * k_plus.iter().sum::<f64>();
        let mut gram = [0.0; 3];
        for k in 0..m {
            gram[0] += eta * e1[k] * e1[k];
            gram[1] += eta * e1[k] * e2[k];
            gram[2] += eta * e2[k] * e2[k];
        }
        let gram_det = gram[0] * gram[2] - gram[1] * gram[1];
        Ok(Self {
            coef,
            m,
            eta,
            t_minus,
            t_plus,
            c1: e.e1_len(eta),
            c2: e.e2_len(eta),
            w: (2.0 * gamma * eta).sqrt(),
            e1,
            e2,
            k_minus,
            k_plus,
            gram,
            gram_det,
        })
    }

    /// `Gamma^{-1} (r1, r2)` for the 2x2 Gram acting coordinatewise.
    pub fn gram_solve(&self, r1: &[f64], r2: &[f64], l1: &mut [f64], l2: &mut [f64]) {
        let [a, b, c] = self.gram;
        let det = self.gram_det;
        for k in 0..r1.len() {
            l1[k] = (c * r1[k] - b * r2[k]) / det;
            l2[k] = (-b * r1[k] + a * r2[k]) / det;
        }
    }
}

/// Stochastic integrals entering one underdamped step, already scaled by
/// `sqrt(2 gamma)`: against `E2(., h)`, `E1(., h)`, `E2(., tau-)`, `E2(., tau+)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UdNoise {
    pub nx: Vec<f64>,
    pub np: Vec<f64>,
    pub n_minus: Vec<f64>,
    pub n_plus: Vec<f64>,
}

impl UdNoise {
    /// Left-endpoint sums over the inner cells of one step.
    pub fn from_cells(s: &UdSetup, xi: &[f64], d: usize) -> Self {
        let mut n = UdNoise {
            nx: vec![0.0; d],
            np: vec![0.0; d],
            n_minus: vec![0.0; d],
            n_plus: vec![0.0; d],
        };
        for j in 0..s.m {
            let c = &xi[j * d..(j + 1) * d];
            for k in 0..d {
                n.nx[k] += s.w * s.e2[j] * c[k];
                n.np[k] += s.w * s.e1[j] * c[k];
                if j < s.t_minus {
                    n.n_minus[k] += s.w * s.k_minus[j] * c[k];
                }
                if j < s.t_plus {
                    n.n_plus[k] += s.w * s.k_plus[j] * c[k];
                }
            }
        }
        n
    }

    pub fn zeros(d: usize) -> Self {
        UdNoise {
            nx: vec![0.0; d],
            np: vec![0.0; d],
            n_minus: vec![0.0; d],
            n_plus: vec![0.0; d],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UdStep {
    pub x_minus: Vec<f64>,
    pub x_plus: Vec<f64>,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub grad_queries: usize,
}

/// DM-ULMC marginal update:
/// `X-/+ = x0 + E2(tau) p0 - E3(tau) grad V(x0) + noise`,
/// `x_h = x0 + E2(h) p0 - E3(h) grad V(X-) + noise`,
/// `p_h = E1(h) p0 - E2(h) grad V(X+) + noise`.
/// With both midpoints at zero this is the exponential-integrator ULMC step.
pub fn dmulmc_marginal(
    v: &PotentialModel,
    c: &UdCoefficients,
    x0: &[f64],
    p0: &[f64],
    noise: &UdNoise,
) -> Result<UdStep> {
    let d = v.dim;
    let g0 = v.gradient(x0)?;
    let mut queries = 1;
    let x_minus: Vec<f64> = (0..d)
        .map(|k| x0[k] + c.e2_minus * p0[k] - c.e3_minus * g0[k] + noise.n_minus[k])
        .collect();
    let x_plus: Vec<f64> = (0..d)
        .map(|k| x0[k] + c.e2_plus * p0[k] - c.e3_plus * g0[k] + noise.n_plus[k])
        .collect();
    let gm = if c.tau_minus == 0.0 {
        g0.clone()
    } else {
        queries += 1;
        v.gradient(&x_minus)?
    };
    let gp = if c.tau_plus == 0.0 {
        g0.clone()
    } else if c.tau_plus == c.tau_minus {
        gm.clone()
    } else {
        queries += 1;
        v.gradient(&x_plus)?
    };
    let x = (0..d)
        .map(|k| x0[k] + c.e2h * p0[k] - c.e3h * gm[k] + noise.nx[k])
        .collect();
    let p = (0..d)
        .map(|k| c.e1h * p0[k] - c.g2h * gp[k] + noise.np[k])
        .collect();
    Ok(UdStep {
        x_minus,
        x_plus,
        x,
        p,
        grad_queries: queries,
    })
}

/// ULMC: gradient frozen at the start of the step.
pub fn ulmc_step(
    v: &PotentialModel,
    gamma: f64,
    h: f64,
    x0: &[f64],
    p0: &[f64],
    noise: &UdNoise,
) -> Result<UdStep> {
    let c = UdCoefficients::new(gamma, h, 0.0, 0.0)?;
    dmulmc_marginal(v, &c, x0, p0, noise)
}

/// Inner underdamped reference: a kick then free flow on every cell.
/// Returns the final `(x, p)`.
pub fn ud_reference(
    v: &PotentialModel,
    gamma: f64,
    x0: &[f64],
    p0: &[f64],
    path: &NoisePath,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = v.dim;
    let eta = path.grid.eta();
    let e = ExpIntegrals::new(gamma)?;
    let (c1, c2, w) = (e.e1_len(eta), e.e2_len(eta), (2.0 * gamma * eta).sqrt());
    let mut x = x0.to_vec();
    let mut p = p0.to_vec();
    let mut g = vec![0.0; d];
    for cell in 0..path.grid.cells() {
        v.gradient_into(&x, &mut g)?;
        let xi = &path.xi[cell * d..(cell + 1) * d];
        for k in 0..d {
            let vel = p[k] - eta * g[k] + w * xi[k];
            x[k] += c2 * vel;
            p[k] = c1 * vel;
        }
    }
    Ok((x, p))
}

/// Inner-grid interpolation of one DM-ULMC step.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolation {
    /// `(m + 1) x d`
    pub x_hat: Vec<f64>,
    pub p_hat: Vec<f64>,
    /// `m x d` effective gradients `grad V(X_k) - E1 l1 - E2 l2`.
    pub g_hat: Vec<f64>,
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub iterations: usize,
}

/// Forward recursion for fixed multipliers. Each cell applies a kick
/// `v = P - eta G + w xi` followed by the exact free flow over one cell.
fn forward(
    v: &PotentialModel,
    s: &UdSetup,
    x0: &[f64],
    p0: &[f64],
    xi: &[f64],
    l1: &[f64],
    l2: &[f64],
    x_hat: &mut [f64],
    p_hat: &mut [f64],
    grads: &mut [f64],
) -> Result<()> {
    let d = v.dim;
    x_hat[..d].copy_from_slice(x0);
    p_hat[..d].copy_from_slice(p0);
    for k in 0..s.m {
        let (xk, rest) = x_hat[k * d..].split_at_mut(d);
        v.gradient_into(xk, &mut grads[k * d..(k + 1) * d])?;
        let (pk, prest) = p_hat[k * d..].split_at_mut(d);
        for i in 0..d {
            let g = grads[k * d + i] - s.e1[k] * l1[i] - s.e2[k] * l2[i];
            let kick = pk[i] - s.eta * g + s.w * xi[k * d + i];
            rest[i] = xk[i] + s.c2 * kick;
            prest[i] = s.c1 * kick;
        }
    }
    Ok(())
}

/// Solves for the multipliers that make the interpolated path hit the
/// marginal update, `sum eta E1 G = E2(h) grad V(X+)` and
/// `sum eta E2 G = E3(h) grad V(X-)` (with the setup's gradient weights).
pub fn solve_dmulmc_interpolation(
    v: &PotentialModel,
    s: &UdSetup,
    x0: &[f64],
    p0: &[f64],
    xi: &[f64],
    step: &UdStep,
    tol: f64,
    max_iter: usize,
) -> Result<Interpolation> {
    let d = v.dim;
    let m = s.m;
    if m < 2 || s.gram_det <= 0.0 {
        return Err(Error::GridMismatch(
            "interpolation needs at least two inner cells per step".into(),
        ));
    }
    let gp = v.gradient(&step.x_plus)?;
    let gm = v.gradient(&step.x_minus)?;
    let target_p: Vec<f64> = gp.iter().map(|a| s.coef.g2h * a).collect();
    let target_x: Vec<f64> = gm.iter().map(|a| s.coef.e3h * a).collect();

    let mut l1 = vec![0.0; d];
    let mut l2 = vec![0.0; d];
    let mut x_hat = vec![0.0; (m + 1) * d];
    let mut p_hat = vec![0.0; (m + 1) * d];
    let mut grads = vec![0.0; m * d];
    let mut prev = vec![f64::INFINITY; (m + 1) * d];
    let mut r1 = vec![0.0; d];
    let mut r2 = vec![0.0; d];
    let mut iterations = 0;
    loop {
        forward(
            v, s, x0, p0, xi, &l1, &l2, &mut x_hat, &mut p_hat, &mut grads,
        )?;
        let scale = x_hat.iter().fold(1.0f64, |a, b| a.max(b.abs()));
        let change = x_hat
            .iter()
            .zip(&prev)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        if !change.is_finite() && iterations > 0 {
            return Err(non_convergence(v, s));
        }
        if change <= tol * scale {
            break;
        }
        if iterations == max_iter {
            return Err(non_convergence(v, s));
        }
        iterations += 1;
        prev.copy_from_slice(&x_hat);
        for i in 0..d {
            r1[i] = -target_p[i];
            r2[i] = -target_x[i];
        }
        for k in 0..m {
            for i in 0..d {
                r1[i] += s.eta * s.e1[k] * grads[k * d + i];
                r2[i] += s.eta * s.e2[k] * grads[k * d + i];
            }
        }
        s.gram_solve(&r1, &r2, &mut l1, &mut l2);
    }
    let mut g_hat = grads;
    for k in 0..m {
        for i in 0..d {
            g_hat[k * d + i] -= s.e1[k] * l1[i] + s.e2[k] * l2[i];
        }
    }
    Ok(Interpolation {
        x_hat,
        p_hat,
        g_hat,
        lambda1: l1,
        lambda2: l2,
        iterations,
    })
}

fn non_convergence(v: &PotentialModel, s: &UdSetup) -> Error {
    Error::StepSize(format!(
        "interpolation fixed point did not converge at h = {}; requires h <~ 1/sqrt(beta) = {:.4}",
        s.coef.h,
        1.0 / v.beta.sqrt()
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct UdTrajectory {
    pub dim: usize,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub x_minus: Vec<f64>,
    pub x_plus: Vec<f64>,
    pub t_index: Vec<(usize, usize)>,
    pub grad_queries: usize,
}

impl UdTrajectory {
    pub fn state(&self, k: usize) -> (&[f64], &[f64]) {
        let d = self.dim;
        (&self.x[k * d..(k + 1) * d], &self.p[k * d..(k + 1) * d])
    }
}

/// Runs DM-ULMC along a path (ULMC when the schedule gives zero midpoints).
pub fn simulate_ud(
    v: &PotentialModel,
    gamma: f64,
    schedule: &UdSchedule,
    x0: &[f64],
    p0: &[f64],
    path: &NoisePath,
) -> Result<UdTrajectory> {
    let d = v.dim;
    if path.dim != d || x0.len() != d || p0.len() != d {
        return Err(Error::GridMismatch(
            "dimension of path, start and potential differ".into(),
        ));
    }
    let grid = path.grid;
    let n = grid.n_steps;
    let mut tr = UdTrajectory {
        dim: d,
        x: Vec::with_capacity((n + 1) * d),
        p: Vec::with_capacity((n + 1) * d),
        x_minus: Vec::with_capacity(n * d),
        x_plus: Vec::with_capacity(n * d),
        t_index: Vec::with_capacity(n),
        grad_queries: 0,
    };
    tr.x.extend_from_slice(x0);
    tr.p.extend_from_slice(p0);
    let (mut x, mut p) = (x0.to_vec(), p0.to_vec());
    for k in 0..n {
        let (tm, tp) = schedule.indices(k, &grid)?;
        let s = UdSetup::new(gamma, &grid, tm, tp)?;
        let noise = UdNoise::from_cells(&s, path.step(k), d);
        let st = dmulmc_marginal(v, &s.coef, &x, &p, &noise)?;
        if !st.x.iter().chain(&st.p).all(|a| a.is_finite()) {
            return Err(Error::Overflow {
                step: k,
                what: "non-finite state".into(),
            });
        }
        tr.grad_queries += st.grad_queries;
        tr.x_minus.extend_from_slice(&st.x_minus);
        tr.x_plus.extend_from_slice(&st.x_plus);
        tr.x.extend_from_slice(&st.x);
        tr.p.extend_from_slice(&st.p);
        tr.t_index.push((tm, tp));
        x = st.x;
        p = st.p;
    }
    Ok(tr)
}

/// Midpoint choice for underdamped runs: ULMC pins both midpoints to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UdSchedule {
    Ulmc,
    Midpoint(MidpointSchedule),
}

impl UdSchedule {
    pub fn indices(&self, step: usize, grid: &TimeGrid) -> Result<(usize, usize)> {
        match self {
            UdSchedule::Ulmc => Ok((0, 0)),
            UdSchedule::Midpoint(s) => s.ud_indices(step, grid),
        }
    }
}
