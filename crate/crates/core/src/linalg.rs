//! Small numerical helpers shared by the estimators and weight code.

use nalgebra::{DMatrix, DVector};

/// Pairwise (cascade) summation. The association order depends only on the
/// length, so results do not change with how the inputs were produced.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

pub fn pairwise_mean(v: &[f64]) -> f64 {
    pairwise_sum(v) / v.len() as f64
}

/// `log |det A|` and the sign of `det A` via partial-pivot LU.
/// A singular matrix gives `(-inf, 0.0)`.
pub fn log_abs_det(a: DMatrix<f64>) -> (f64, f64) {
    let n = a.nrows();
    let lu = a.lu();
    let mut sign = lu.p().determinant::<f64>();
    let mut acc = 0.0;
    let u = lu.u();
    for i in 0..n {
        let d = u[(i, i)];
        if d == 0.0 || !d.is_finite() {
            return (f64::NEG_INFINITY, 0.0);
        }
        if d < 0.0 {
            sign = -sign;
        }
        acc += d.abs().ln();
    }
    (acc, sign)
}

/// Spectral radius estimate from `iters` normalized power iterations,
/// using the geometric mean of the growth factors over the second half.
pub fn spectral_radius_estimate(a: &DMatrix<f64>, iters: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    // deterministic start with no special alignment to the grid structure
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.5 * ((i as f64) * 0.7548776662).sin());
    v /= v.norm();
    let mut log_growth = 0.0;
    let mut counted = 0;
    for it in 0..iters {
        let w = a * &v;
        let g = w.norm();
        if g == 0.0 {
            return 0.0;
        }
        if it >= iters / 2 {
            log_growth += g.ln();
            counted += 1;
        }
        v = w / g;
    }
    (log_growth / counted.max(1) as f64).exp()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a * x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Ordinary least squares fit `y = a + b x`; returns `(slope, intercept, r2)`.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    (slope, my - slope * mx, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sqrt()).collect();
        let naive: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - naive).abs() < 1e-9);
    }

    #[test]
    fn logdet_sign() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let (l, s) = log_abs_det(a);
        assert!(l.abs() < 1e-15);
        assert_eq!(s, -1.0);
        let (l, s) = log_abs_det(DMatrix::zeros(2, 2));
        assert_eq!((l, s), (f64::NEG_INFINITY, 0.0));
    }

    #[test]
    fn radius_of_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, -0.8, 0.1]));
        assert!((spectral_radius_estimate(&a, 200) - 0.8).abs() < 1e-6);
    }
}
