//! Divergence estimators and exact Gaussian references.

use nalgebra::{DMatrix, DVector};

use crate::error::{domain, Error, Result};
use crate::expint::ExpIntegrals;
use crate::girsanov::{analyze_od_step, analyze_ud_step, Detail, SolverOptions};
use crate::grid::{MidpointSchedule, TimeGrid};
use crate::linalg::{log_abs_det, pairwise_mean, pairwise_sum};
use crate::ou::LinearSde;
use crate::overdamped::mlmc_step;
use crate::potential::PotentialModel;
use crate::scheme::{Scheme, SchemeSpec};
use crate::underdamped::UdSetup;

/// Fraction of rejected paths above which an estimate is flagged.
pub const REJECTION_LIMIT: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceEstimate {
    pub value: f64,
    pub se: f64,
    pub n_paths: usize,
    pub rejected: usize,
    pub unreliable: bool,
}

impl DivergenceEstimate {
    fn new(value: f64, se: f64, n_paths: usize, rejected: usize) -> Self {
        let total = n_paths + rejected;
        let unreliable = total == 0 || rejected as f64 >= REJECTION_LIMIT * total as f64;
        Self {
            value,
            se,
            n_paths,
            rejected,
            unreliable,
        }
    }
}

/// Jackknife standard error from leave-one-out values.
pub fn jackknife_se(loo: &[f64]) -> f64 {
    let n = loo.len() as f64;
    if loo.len() < 2 {
        return f64::NAN;
    }
    let mean = pairwise_mean(loo);
    let dev: Vec<f64> = loo.iter().map(|a| (a - mean).powi(2)).collect();
    ((n - 1.0) / n * pairwise_sum(&dev)).sqrt()
}

/// Sample mean with its jackknife standard error.
pub fn mean_with_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let total = pairwise_sum(x);
    let loo: Vec<f64> = x.iter().map(|a| (total - a) / (n - 1.0)).collect();
    (total / n, jackknife_se(&loo))
}

/// `KL(P || Q) ~ mean(-log M)` over accepted paths. Non-finite weights are
/// counted as rejections.
pub fn estimate_kl(log_weights: &[f64], rejected: usize) -> DivergenceEstimate {
    let vals: Vec<f64> = log_weights
        .iter()
        .filter(|w| w.is_finite())
        .map(|w| -w)
        .collect();
    let rejected = rejected + (log_weights.len() - vals.len());
    let (m, se) = mean_with_se(&vals);
    DivergenceEstimate::new(m, se, vals.len(), rejected)
}

/// Same target as [`estimate_kl`], dropping the Skorohod integral, whose
/// mean under `P` is zero: `mean(energy - log_cf_det)`.
pub fn estimate_kl_control_variate(
    log_cf_det: &[f64],
    energy: &[f64],
    rejected: usize,
) -> DivergenceEstimate {
    let vals: Vec<f64> = log_cf_det
        .iter()
        .zip(energy)
        .map(|(c, e)| e - c)
        .filter(|v| v.is_finite())
        .collect();
    let rejected = rejected + (log_cf_det.len() - vals.len());
    let (m, se) = mean_with_se(&vals);
    DivergenceEstimate::new(m, se, vals.len(), rejected)
}

/// Renyi divergence `R_q(P || Q) = log E_P[M^{-(q-1)}] / (q - 1)`.
pub fn estimate_renyi(log_weights: &[f64], rejected: usize, q: f64) -> Result<DivergenceEstimate> {
    if !(q > 1.0 && q.is_finite()) {
        return domain(format!("Renyi order must exceed 1, got {q}"));
    }
    let a: Vec<f64> = log_weights
        .iter()
        .filter(|w| w.is_finite())
        .map(|w| -(q - 1.0) * w)
        .collect();
    let rejected = rejected + (log_weights.len() - a.len());
    let n = a.len();
    if n < 2 {
        return Ok(DivergenceEstimate::new(f64::NAN, f64::NAN, n, rejected));
    }
    let amax = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = a.iter().map(|x| (x - amax).exp()).collect();
    let total = pairwise_sum(&e);
    let value = ((total / n as f64).ln() + amax) / (q - 1.0);
    let loo: Vec<f64> = e
        .iter()
        .map(|x| ((((total - x).max(0.0)) / (n - 1) as f64).ln() + amax) / (q - 1.0))
        .collect();
    Ok(DivergenceEstimate::new(
        value,
        jackknife_se(&loo),
        n,
        rejected,
    ))
}

/// `KL(N(m1, S1) || N(m2, S2))` via Cholesky factors.
pub fn gaussian_kl(
    m1: &DVector<f64>,
    s1: &DMatrix<f64>,
    m2: &DVector<f64>,
    s2: &DMatrix<f64>,
) -> Result<f64> {
    let n = m1.len();
    if s1.nrows() != n || s2.nrows() != n || m2.len() != n {
        return Err(Error::GridMismatch("Gaussian dimensions differ".into()));
    }
    let c1 = s1
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("first covariance not PD".into()))?;
    let c2 = s2
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("second covariance not PD".into()))?;
    let l1 = c1.l();
    let l2 = c2.l();
    // |L2^{-1} L1|_F^2 = tr(S2^{-1} S1)
    let a = l2
        .solve_lower_triangular(&l1)
        .ok_or_else(|| Error::Domain("singular".into()))?;
    let dm = m2 - m1;
    let b = l2
        .solve_lower_triangular(&dm)
        .ok_or_else(|| Error::Domain("singular".into()))?;
    let logdet = |l: &DMatrix<f64>| (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    Ok(0.5 * (a.norm_squared() + b.norm_squared() - n as f64 + logdet(&l2) - logdet(&l1)))
}

/// `min(1, sqrt(kl / 2))`
pub fn pinsker_tv_bound(kl: f64) -> Result<f64> {
    if !(kl >= 0.0) {
        return domain(format!("KL must be non-negative, got {kl}"));
    }
    Ok((kl / 2.0).sqrt().min(1.0))
}

/// Affine description of one step on a quadratic potential:
/// `s' = a s + b xi + c`, `psi = ps s + px xi + p0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineStep {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
    pub ps: DMatrix<f64>,
    pub px: DMatrix<f64>,
    pub p0: DVector<f64>,
}

/// Extracts the affine step map; exact because the step is affine when the
/// Hessian is constant.
pub fn affine_step(
    spec: &SchemeSpec,
    v: &PotentialModel,
    grid: &TimeGrid,
    step: usize,
) -> Result<AffineStep> {
    if !v.is_quadratic() {
        return Err(Error::Unsupported(
            "affine step maps need a quadratic potential".into(),
        ));
    }
    if matches!(spec.schedule, MidpointSchedule::RandomizedUniform { .. })
        && !matches!(spec.scheme, Scheme::EmLd | Scheme::Ulmc)
    {
        return Err(Error::Unsupported(
            "randomized midpoints give a Gaussian mixture".into(),
        ));
    }
    let d = v.dim;
    let xi = vec![0.0; grid.m * d];
    let zero = vec![0.0; d];
    if spec.scheme.is_underdamped() {
        let (tm, tp) = spec.ud_schedule().indices(step, grid)?;
        let s = UdSetup::new(spec.gamma, grid, tm, tp)?;
        let opts = SolverOptions {
            tol: 1e-15,
            max_iter: 200,
        };
        let (an, _, st) = analyze_ud_step(v, &s, &zero, &zero, &xi, opts, Detail::Full)?;
        let mut c = DVector::zeros(2 * d);
        c.rows_mut(0, d).copy_from_slice(&st.x);
        c.rows_mut(d, d).copy_from_slice(&st.p);
        let j = an.jac;
        Ok(AffineStep {
            a: j.dnext_dstate.unwrap(),
            b: j.dnext_dxi.unwrap(),
            c,
            ps: j.dpsi_dstate.unwrap(),
            px: j.dpsi_dxi.unwrap(),
            p0: DVector::from_vec(an.psi),
        })
    } else {
        let t = spec.od_schedule().od_index(step, grid)?;
        let an = analyze_od_step(v, &zero, &xi, grid.eta(), t, Detail::Full)?;
        let st = mlmc_step(v, &zero, &xi, grid.eta(), t)?;
        let j = an.jac;
        Ok(AffineStep {
            a: j.dnext_dstate.unwrap(),
            b: j.dnext_dxi.unwrap(),
            c: DVector::from_vec(st.x),
            ps: j.dpsi_dstate.unwrap(),
            px: j.dpsi_dxi.unwrap(),
            p0: DVector::from_vec(an.psi),
        })
    }
}

/// Exact mean and covariance of the scheme's state after `N` steps.
pub fn scheme_marginal_gaussian(
    spec: &SchemeSpec,
    v: &PotentialModel,
    grid: &TimeGrid,
    mean0: &DVector<f64>,
    cov0: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (mut m, mut c) = (mean0.clone(), cov0.clone());
    let mut cached: Option<AffineStep> = None;
    for k in 0..grid.n_steps {
        if cached.is_none() || k == 0 {
            cached = Some(affine_step(spec, v, grid, k)?);
        }
        let st = cached.as_ref().unwrap();
        m = &st.a * m + &st.c;
        c = &st.a * c * st.a.transpose() + &st.b * st.b.transpose();
    }
    Ok((m, c))
}

/// Exact law of the inner-grid reference discretization (Euler cells, or
/// kick-then-free-flow cells with friction `gamma`) after all `N m` cells.
/// This is the path measure the weights compare against.
pub fn reference_marginal_gaussian(
    v: &PotentialModel,
    gamma: Option<f64>,
    grid: &TimeGrid,
    mean0: &DVector<f64>,
    cov0: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !v.is_quadratic() {
        return Err(Error::Unsupported(
            "reference marginals need a quadratic potential".into(),
        ));
    }
    let h = v.hessian(&vec![0.0; v.dim])?;
    let g = DVector::from_vec(v.gradient(&vec![0.0; v.dim])?);
    let d = v.dim;
    let eta = grid.eta();
    // one cell: s' = a s + b xi + c
    let (a, b, c) = match gamma {
        None => (
            DMatrix::identity(d, d) - &h * eta,
            DMatrix::identity(d, d) * (2.0 * eta).sqrt(),
            -&g * eta,
        ),
        Some(gamma) => {
            let e = ExpIntegrals::new(gamma)?;
            let (c1, c2, w) = (e.e1_len(eta), e.e2_len(eta), (2.0 * gamma * eta).sqrt());
            // kick: vel = p - eta (H x + g) + w xi; x' = x + c2 vel; p' = c1 vel
            let mut kick = DMatrix::zeros(d, 2 * d);
            kick.view_mut((0, 0), (d, d)).copy_from(&(-&h * eta));
            kick.view_mut((0, d), (d, d)).fill_with_identity();
            let mut a = DMatrix::zeros(2 * d, 2 * d);
            a.view_mut((0, 0), (d, d)).fill_with_identity();
            let top = a.view((0, 0), (d, 2 * d)).into_owned() + &kick * c2;
            a.view_mut((0, 0), (d, 2 * d)).copy_from(&top);
            a.view_mut((d, 0), (d, 2 * d)).copy_from(&(&kick * c1));
            let mut b = DMatrix::zeros(2 * d, d);
            b.view_mut((0, 0), (d, d)).fill_diagonal(c2 * w);
            b.view_mut((d, 0), (d, d)).fill_diagonal(c1 * w);
            let mut c = DVector::zeros(2 * d);
            c.rows_mut(0, d).copy_from(&(-&g * (eta * c2)));
            c.rows_mut(d, d).copy_from(&(-&g * (eta * c1)));
            (a, b, c)
        }
    };
    let bb = &b * b.transpose();
    let (mut m, mut cov) = (mean0.clone(), cov0.clone());
    for _ in 0..grid.cells() {
        m = &a * m + &c;
        cov = &a * cov * a.transpose() + &bb;
    }
    Ok((m, 0.5 * (&cov + cov.transpose())))
}

/// Exact law of the diffusion (LD, or ULD with friction `gamma`) at time `t`.
pub fn diffusion_marginal_gaussian(
    v: &PotentialModel,
    gamma: Option<f64>,
    t: f64,
    mean0: &DVector<f64>,
    cov0: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let sde = match gamma {
        None => LinearSde::overdamped(v)?,
        Some(g) => LinearSde::underdamped(v, g)?,
    };
    let tr = sde.transition(t);
    let m = &tr.phi * mean0 + &tr.shift;
    let c = &tr.phi * cov0 * tr.phi.transpose() + &tr.cov;
    Ok((m, 0.5 * (&c + c.transpose())))
}

/// Exact path-space `KL(P || Q)` between the scheme and the inner-grid
/// reference discretization on a quadratic potential with Gaussian start.
///
/// Per step, with state `s ~ N(mu, S)`, `psi` is affine and its derivative
/// `D` is constant, so `E[-log M] = sum_k 1/2 E|psi_k|^2 + tr D_k - log|det(I + D_k)|`
/// (the Skorohod integral has mean zero).
pub fn exact_path_kl_gaussian(
    spec: &SchemeSpec,
    v: &PotentialModel,
    grid: &TimeGrid,
    mean0: &DVector<f64>,
    cov0: &DMatrix<f64>,
) -> Result<f64> {
    let st = affine_step(spec, v, grid, 0)?;
    let n = st.px.nrows();
    let (ld, sign) = log_abs_det(DMatrix::identity(n, n) + &st.px);
    if sign <= 0.0 {
        return Err(Error::StepSize(
            "I + D is not positive definite-determinant".into(),
        ));
    }
    let fixed = st.px.trace() - ld + 0.5 * st.px.norm_squared();
    let (mut m, mut c) = (mean0.clone(), cov0.clone());
    let mut terms = Vec::with_capacity(grid.n_steps);
    for _ in 0..grid.n_steps {
        let mu = &st.ps * &m + &st.p0;
        let quad = (&st.ps * &c * st.ps.transpose()).trace();
        terms.push(fixed + 0.5 * (mu.norm_squared() + quad));
        m = &st.a * m + &st.c;
        c = &st.a * c * st.a.transpose() + &st.b * st.b.transpose();
    }
    Ok(pairwise_sum(&terms))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_shift_kl() {
        let i = DMatrix::identity(1, 1);
        let kl = gaussian_kl(
            &DVector::from_vec(vec![0.0]),
            &i,
            &DVector::from_vec(vec![1.0]),
            &i,
        )
        .unwrap();
        assert!((kl - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pinsker_examples() {
        assert!((pinsker_tv_bound(0.02).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(pinsker_tv_bound(10.0).unwrap(), 1.0);
        assert!(pinsker_tv_bound(-1e-3).is_err());
    }

    #[test]
    fn renyi_rejects_small_order() {
        assert!(estimate_renyi(&[0.0, 0.1], 0, 1.0).is_err());
    }
}
