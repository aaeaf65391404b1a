//! Overdamped schemes: inner Euler reference, EM-LD and the midpoint M-LMC.

use crate::error::{Error, Result};
use crate::grid::{MidpointSchedule, NoisePath};
use crate::potential::PotentialModel;

/// One Euler-Maruyama cell of overdamped Langevin:
/// `x - eta grad V(x) + sqrt(2 eta) xi`.
pub fn em_ld_cell(v: &PotentialModel, x: &[f64], xi: &[f64], eta: f64) -> Result<Vec<f64>> {
    let g = v.gradient(x)?;
    let s = (2.0 * eta).sqrt();
    Ok(x.iter()
        .zip(&g)
        .zip(xi)
        .map(|((a, b), c)| a - eta * b + s * c)
        .collect())
}

/// Inner Euler reference over a whole path; returns `(N m + 1) x d` states.
pub fn em_ld_reference(v: &PotentialModel, x0: &[f64], path: &NoisePath) -> Result<Vec<f64>> {
    let d = v.dim;
    let eta = path.grid.eta();
    let mut out = Vec::with_capacity((path.grid.cells() + 1) * d);
    out.extend_from_slice(x0);
    let mut x = x0.to_vec();
    for c in 0..path.grid.cells() {
        x = em_ld_cell(v, &x, &path.xi[c * d..(c + 1) * d], eta)?;
        out.extend_from_slice(&x);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmcStep {
    pub x_plus: Vec<f64>,
    pub x: Vec<f64>,
    pub grad_queries: usize,
}

/// One M-LMC step with midpoint `tau = t * eta`.
///
/// `X+ = x0 - tau grad V(x0) + sqrt(2) B_tau`,
/// `x_h = x0 - h grad V(X+) + sqrt(2) B_h`, with `B` the partial sums of
/// the step's inner cells (`xi` is row-major `m x d`). `t = 0` is one Euler
/// step of size `h`.
pub fn mlmc_step(
    v: &PotentialModel,
    x0: &[f64],
    xi: &[f64],
    eta: f64,
    t: usize,
) -> Result<MlmcStep> {
    let d = v.dim;
    let m = xi.len() / d;
    if t > m {
        return Err(Error::GridMismatch(format!(
            "midpoint index {t} beyond {m} cells"
        )));
    }
    let s = (2.0 * eta).sqrt();
    let g0 = v.gradient(x0)?;
    let mut bt = vec![0.0; d];
    for j in 0..t {
        for k in 0..d {
            bt[k] += xi[j * d + k];
        }
    }
    let mut bh = bt.clone();
    for j in t..m {
        for k in 0..d {
            bh[k] += xi[j * d + k];
        }
    }
    let tau = t as f64 * eta;
    let x_plus: Vec<f64> = (0..d).map(|k| x0[k] - tau * g0[k] + s * bt[k]).collect();
    let (gp, queries) = if t == 0 {
        (g0, 1)
    } else {
        (v.gradient(&x_plus)?, 2)
    };
    let h = m as f64 * eta;
    let x = (0..d).map(|k| x0[k] - h * gp[k] + s * bh[k]).collect();
    Ok(MlmcStep {
        x_plus,
        x,
        grad_queries: queries,
    })
}

/// Inner-grid interpolant of an M-LMC step, `(m + 1) x d`:
/// `X_i = x0 - i eta grad V(X+) + sqrt(2 eta) sum_{j<i} xi_j`.
pub fn mlmc_interpolant(
    v: &PotentialModel,
    x0: &[f64],
    x_plus: &[f64],
    xi: &[f64],
    eta: f64,
) -> Result<Vec<f64>> {
    let d = v.dim;
    let m = xi.len() / d;
    let gp = v.gradient(x_plus)?;
    let s = (2.0 * eta).sqrt();
    let mut out = vec![0.0; (m + 1) * d];
    let mut b = vec![0.0; d];
    for i in 0..=m {
        for k in 0..d {
            out[i * d + k] = x0[k] - i as f64 * eta * gp[k] + s * b[k];
        }
        if i < m {
            for k in 0..d {
                b[k] += xi[i * d + k];
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdTrajectory {
    pub dim: usize,
    /// `(N + 1) x d` outer states.
    pub x: Vec<f64>,
    /// `N x d` midpoint states.
    pub x_plus: Vec<f64>,
    /// Midpoint grid index per step.
    pub t_index: Vec<usize>,
    pub grad_queries: usize,
}

impl OdTrajectory {
    pub fn state(&self, k: usize) -> &[f64] {
        &self.x[k * self.dim..(k + 1) * self.dim]
    }
    pub fn midpoint(&self, k: usize) -> &[f64] {
        &self.x_plus[k * self.dim..(k + 1) * self.dim]
    }
}

fn check_finite(x: &[f64], step: usize) -> Result<()> {
    if x.iter().all(|a| a.is_finite()) {
        Ok(())
    } else {
        Err(Error::Overflow {
            step,
            what: "non-finite state".into(),
        })
    }
}

/// Runs M-LMC (or EM-LD when every midpoint index is zero) along a path.
pub fn simulate_od(
    v: &PotentialModel,
    schedule: &MidpointSchedule,
    x0: &[f64],
    path: &NoisePath,
) -> Result<OdTrajectory> {
    let d = v.dim;
    if path.dim != d || x0.len() != d {
        return Err(Error::GridMismatch(
            "dimension of path, start and potential differ".into(),
        ));
    }
    let grid = path.grid;
    let n = grid.n_steps;
    let mut x = Vec::with_capacity((n + 1) * d);
    let mut x_plus = Vec::with_capacity(n * d);
    let mut t_index = Vec::with_capacity(n);
    let mut queries = 0;
    x.extend_from_slice(x0);
    let mut cur = x0.to_vec();
    for k in 0..n {
        let t = schedule.od_index(k, &grid)?;
        let st = mlmc_step(v, &cur, path.step(k), grid.eta(), t)?;
        check_finite(&st.x, k)?;
        queries += st.grad_queries;
        x_plus.extend_from_slice(&st.x_plus);
        x.extend_from_slice(&st.x);
        t_index.push(t);
        cur = st.x;
    }
    Ok(OdTrajectory {
        dim: d,
        x,
        x_plus,
        t_index,
        grad_queries: queries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euler_cell_example() {
        let v = PotentialModel::isotropic(1, 1.0).unwrap();
        let x = em_ld_cell(&v, &[1.0], &[0.0], 0.1).unwrap();
        assert!((x[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn mlmc_example() {
        let v = PotentialModel::isotropic(1, 1.0).unwrap();
        // h = 0.2, m = 2, tau = 0.1
        let st = mlmc_step(&v, &[1.0], &[0.0, 0.0], 0.1, 1).unwrap();
        assert!((st.x_plus[0] - 0.9).abs() < 1e-15);
        assert!((st.x[0] - 0.82).abs() < 1e-15);
        assert_eq!(st.grad_queries, 2);
    }

    #[test]
    fn zero_midpoint_is_euler() {
        let v = PotentialModel::perturbed(vec![1.0, 2.0], 0.1, 1.5).unwrap();
        let xi = [0.3, -0.2, 1.1, 0.4];
        let st = mlmc_step(&v, &[0.5, -0.7], &xi, 0.05, 0).unwrap();
        let g = v.gradient(&[0.5, -0.7]).unwrap();
        let s = 0.1f64.sqrt();
        let want = [0.5 - 0.1 * g[0] + s * 1.4, -0.7 - 0.1 * g[1] + s * 0.2];
        for k in 0..2 {
            assert!((st.x[k] - want[k]).abs() < 1e-14);
        }
        assert_eq!(st.grad_queries, 1);
    }
}
