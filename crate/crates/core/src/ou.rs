//! Exact Gaussian transitions of Langevin dynamics on quadratic potentials.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{derive_stream, purpose, CellRng, NoisePath};
use crate::potential::PotentialModel;

/// Linear SDE `ds = (A s + b) dt + S dB` with `B` of dimension `S.ncols()`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSde {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub s: DMatrix<f64>,
}

impl LinearSde {
    /// Overdamped Langevin: `A = -H`, `b = -g`, `S = sqrt(2) I`.
    pub fn overdamped(v: &PotentialModel) -> Result<Self> {
        let (h, g) = quadratic_parts(v)?;
        let d = v.dim;
        Ok(Self {
            a: -h,
            b: -g,
            s: DMatrix::from_diagonal_element(d, d, 2f64.sqrt()),
        })
    }

    /// Underdamped Langevin on `(x, p)`: `A = [[0, I], [-H, -gamma I]]`,
    /// noise `sqrt(2 gamma)` on the momentum.
    pub fn underdamped(v: &PotentialModel, gamma: f64) -> Result<Self> {
        let (h, g) = quadratic_parts(v)?;
        let d = v.dim;
        let mut a = DMatrix::zeros(2 * d, 2 * d);
        let mut b = DVector::zeros(2 * d);
        let mut s = DMatrix::zeros(2 * d, d);
        for i in 0..d {
            a[(i, d + i)] = 1.0;
            a[(d + i, d + i)] = -gamma;
            b[d + i] = -g[i];
            s[(d + i, i)] = (2.0 * gamma).sqrt();
            for j in 0..d {
                a[(d + i, j)] = -h[(i, j)];
            }
        }
        Ok(Self { a, b, s })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Exact transition over a time `t`.
    pub fn transition(&self, t: f64) -> OuTransition {
        let n = self.dim();
        let q = &self.s * self.s.transpose();
        // Van Loan: exp([[-A, Q], [0, A^T]] t) = [[., F12], [0, F22]],
        // e^{At} = F22^T and the covariance is F22^T F12.
        let mut vl = DMatrix::zeros(2 * n, 2 * n);
        vl.view_mut((0, 0), (n, n)).copy_from(&(-&self.a * t));
        vl.view_mut((0, n), (n, n)).copy_from(&(&q * t));
        vl.view_mut((n, n), (n, n))
            .copy_from(&(self.a.transpose() * t));
        let e = vl.exp();
        let f12 = e.view((0, n), (n, n)).into_owned();
        let phi = e.view((n, n), (n, n)).transpose();
        let mut cov = &phi * f12;
        cov = 0.5 * (&cov + cov.transpose());
        // integral of e^{Au} over [0, t] from exp([[A, I], [0, 0]] t)
        let mut aug = DMatrix::zeros(2 * n, 2 * n);
        aug.view_mut((0, 0), (n, n)).copy_from(&(&self.a * t));
        aug.view_mut((0, n), (n, n))
            .copy_from(&DMatrix::from_diagonal_element(n, n, t));
        let int_phi = aug.exp().view((0, n), (n, n)).into_owned();
        let shift = &int_phi * &self.b;
        let cross = &int_phi * &self.s;
        OuTransition {
            t,
            phi,
            shift,
            cov,
            cross,
        }
    }
}

fn quadratic_parts(v: &PotentialModel) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if !v.is_quadratic() {
        return Err(Error::Unsupported(
            "exact flow requires a quadratic potential".into(),
        ));
    }
    let h = v.hessian(&vec![0.0; v.dim])?;
    let g = DVector::from_vec(v.gradient(&vec![0.0; v.dim])?);
    Ok((h, g))
}

/// `s_t = phi s_0 + shift + w`, with `w ~ N(0, cov)` and
/// `Cov(w, B_t) = cross`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuTransition {
    pub t: f64,
    pub phi: DMatrix<f64>,
    pub shift: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub cross: DMatrix<f64>,
}

/// Symmetric square root of a PSD matrix, clipping tiny negative eigenvalues.
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let e = a.clone().symmetric_eigen();
    let d = e.eigenvalues.map(|l| l.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose()
}

impl OuTransition {
    /// Splits the noise into the part explained by `B_t = sqrt(t) xi` and an
    /// independent residual: `w = gain xi + resid zeta`.
    pub fn coupling(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let gain = &self.cross / self.t.sqrt();
        let resid_cov = &self.cov - &gain * gain.transpose();
        (gain, psd_sqrt(&resid_cov))
    }
}

/// Exact flow of (over- or under-damped) Langevin on a quadratic potential,
/// driven by the path's cell increments plus an independent residual stream,
/// so that it is synchronously coupled with any scheme using the same path.
/// Returns `(N m + 1) x n` states, `n = d` or `2 d`.
pub fn exact_ou_flow(
    v: &PotentialModel,
    gamma: Option<f64>,
    x0: &[f64],
    p0: Option<&[f64]>,
    path: &NoisePath,
) -> Result<Vec<f64>> {
    let sde = match gamma {
        None => LinearSde::overdamped(v)?,
        Some(g) => LinearSde::underdamped(v, g)?,
    };
    let n = sde.dim();
    let d = v.dim;
    let mut s = DVector::zeros(n);
    s.rows_mut(0, d).copy_from_slice(x0);
    if gamma.is_some() {
        let p0 = p0.ok_or_else(|| Error::Domain("underdamped flow needs p0".into()))?;
        s.rows_mut(d, d).copy_from_slice(p0);
    }
    let tr = sde.transition(path.grid.eta());
    let (gain, resid) = tr.coupling();
    let rng = CellRng::new(
        path.seed,
        derive_stream(path.stream, purpose::RESIDUAL, path.level as u64),
    );
    let mut out = Vec::with_capacity((path.grid.cells() + 1) * n);
    out.extend_from_slice(s.as_slice());
    let mut z = DVector::zeros(n);
    for c in 0..path.grid.cells() {
        let xi = DVector::from_column_slice(&path.xi[c * d..(c + 1) * d]);
        rng.normals(c as u64, z.as_mut_slice());
        s = &tr.phi * &s + &tr.shift + &gain * xi + &resid * &z;
        out.extend_from_slice(s.as_slice());
    }
    Ok(out)
}
