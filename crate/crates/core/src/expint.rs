//! Exponential integrals of the underdamped friction kernel.
//!
//! With `u = t - s`: `E1 = exp(-g u)`, `E2 = (1 - E1)/g`, `E3 = (u - E2)/g`.

use crate::error::{domain, Result};

/// Below this value of `g u` the closed forms lose digits and series are used.
const SERIES_CUTOFF: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpIntegrals {
    pub gamma: f64,
}

/// `sum_{k>=0} (-x)^k / (k + p)!` scaled so that `p = 1` gives `(1 - e^-x)/x`
/// and `p = 2` gives `(x - 1 + e^-x)/x^2`.
fn phi(x: f64, p: u32) -> f64 {
    let mut fact = 1.0;
    for i in 1..=p {
        fact *= i as f64;
    }
    let mut term = 1.0 / fact;
    let mut sum = term;
    let mut k = 0u32;
    while term.abs() > 1e-18 * sum.abs() && k < 60 {
        k += 1;
        term *= -x / (k + p) as f64;
        sum += term;
    }
    sum
}

impl ExpIntegrals {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return domain("friction must be finite and non-negative");
        }
        Ok(Self { gamma })
    }

    fn check(s: f64, t: f64) -> Result<f64> {
        if !(s.is_finite() && t.is_finite()) {
            return domain("non-finite time");
        }
        if t < s {
            return domain(format!("t = {t} precedes s = {s}"));
        }
        Ok(t - s)
    }

    pub fn e1(&self, s: f64, t: f64) -> Result<f64> {
        Ok(self.e1_len(Self::check(s, t)?))
    }
    pub fn e2(&self, s: f64, t: f64) -> Result<f64> {
        Ok(self.e2_len(Self::check(s, t)?))
    }
    pub fn e3(&self, s: f64, t: f64) -> Result<f64> {
        Ok(self.e3_len(Self::check(s, t)?))
    }

    pub fn e1_len(&self, u: f64) -> f64 {
        (-self.gamma * u).exp()
    }

    pub fn e2_len(&self, u: f64) -> f64 {
        let x = self.gamma * u;
        if x < SERIES_CUTOFF {
            u * phi(x, 1)
        } else {
            -(-x).exp_m1() / self.gamma
        }
    }

    pub fn e3_len(&self, u: f64) -> f64 {
        let x = self.gamma * u;
        if x < SERIES_CUTOFF {
            u * u * phi(x, 2)
        } else {
            (u - self.e2_len(u)) / self.gamma
        }
    }

    /// Continuous Gram of the kernels `E1(., h)` and `E2(., h)` on `[0, h]`.
    pub fn sigma(&self, h: f64) -> Result<SigmaCoefficients> {
        if !(h.is_finite() && h > 0.0) {
            return domain("step must be positive");
        }
        let g = self.gamma;
        let x = g * h;
        let (s11, s12, s22) = if x < SERIES_CUTOFF {
            // integrate the power series of exp(-a r) term by term
            let (mut s11, mut s12, mut s22) = (0.0, 0.0, 0.0);
            let mut fact = 1.0; // (k+1)!
            let mut hk = h; // h^(k+1)
            for k in 0..40i32 {
                fact *= (k + 1) as f64;
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                let two_k = 2f64.powi(k);
                s11 += sign * two_k * g.powi(k) * hk / fact;
                if k >= 1 {
                    s12 += sign * (1.0 - two_k) * g.powi(k - 1) * hk / fact;
                }
                if k >= 2 {
                    s22 += sign * (two_k - 2.0) * g.powi(k - 2) * hk / fact;
                }
                hk *= h;
            }
            (s11, s12, s22)
        } else {
            let e2 = self.e2_len(h);
            let s11 = -(-2.0 * x).exp_m1() / (2.0 * g);
            (s11, (e2 - s11) / g, (h - 2.0 * e2 + s11) / (g * g))
        };
        Ok(SigmaCoefficients {
            s11,
            s12,
            s22,
            det: s11 * s22 - s12 * s12,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaCoefficients {
    pub s11: f64,
    pub s12: f64,
    pub s22: f64,
    pub det: f64,
}
