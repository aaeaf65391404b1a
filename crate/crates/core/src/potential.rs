//! Potentials with certified Hessian bounds.

use nalgebra::DMatrix;

use crate::error::{domain, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialKind {
    /// `scale/2 * |x|^2`
    IsotropicQuadratic { scale: f64 },
    /// `1/2 * sum_i spectrum[i] * x_i^2`
    AnisotropicQuadratic { spectrum: Vec<f64> },
    /// Anisotropic quadratic plus `A * (sum_i cos(w x_i) + cos(w <1,x>/sqrt(d)))`.
    /// The second cosine couples coordinates so the Hessian is not diagonal.
    PerturbedQuadratic {
        spectrum: Vec<f64>,
        amplitude: f64,
        frequency: f64,
    },
    /// `sum_i (a/2 x_i^2 + b log cosh x_i)`
    ProductNonGaussian { curvature: f64, bump: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialModel {
    pub dim: usize,
    /// Certified bound on the largest absolute Hessian eigenvalue.
    pub beta: f64,
    /// Strong convexity constant (0 when not convex).
    pub alpha: f64,
    pub kind: PotentialKind,
    /// Optional linear tilt `<g, x>` added to every kind.
    pub tilt: Option<Vec<f64>>,
}

fn check_params(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return domain(format!("{what} must be finite"));
    }
    Ok(())
}

impl PotentialModel {
    pub fn isotropic(dim: usize, scale: f64) -> Result<Self> {
        if dim == 0 {
            return domain("dimension must be positive");
        }
        check_params(&[scale], "scale")?;
        Ok(Self {
            dim,
            beta: scale.abs(),
            alpha: scale.max(0.0),
            kind: PotentialKind::IsotropicQuadratic { scale },
            tilt: None,
        })
    }

    pub fn anisotropic(spectrum: Vec<f64>) -> Result<Self> {
        if spectrum.is_empty() {
            return domain("spectrum must be non-empty");
        }
        check_params(&spectrum, "spectrum")?;
        let beta = spectrum.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let alpha = spectrum
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
            .max(0.0);
        Ok(Self {
            dim: spectrum.len(),
            beta,
            alpha,
            kind: PotentialKind::AnisotropicQuadratic { spectrum },
            tilt: None,
        })
    }

    pub fn perturbed(spectrum: Vec<f64>, amplitude: f64, frequency: f64) -> Result<Self> {
        if spectrum.is_empty() {
            return domain("spectrum must be non-empty");
        }
        check_params(&spectrum, "spectrum")?;
        check_params(&[amplitude, frequency], "perturbation")?;
        // each cosine term contributes a Hessian of norm <= |A| w^2
        let bump = 2.0 * amplitude.abs() * frequency * frequency;
        let beta = spectrum.iter().fold(0.0f64, |m, v| m.max(v.abs() + bump));
        let alpha = (spectrum.iter().cloned().fold(f64::INFINITY, f64::min) - bump).max(0.0);
        Ok(Self {
            dim: spectrum.len(),
            beta,
            alpha,
            kind: PotentialKind::PerturbedQuadratic {
                spectrum,
                amplitude,
                frequency,
            },
            tilt: None,
        })
    }

    pub fn product(dim: usize, curvature: f64, bump: f64) -> Result<Self> {
        if dim == 0 {
            return domain("dimension must be positive");
        }
        check_params(&[curvature, bump], "product parameters")?;
        let lo = curvature.min(curvature + bump);
        let hi = curvature.max(curvature + bump);
        Ok(Self {
            dim,
            beta: lo.abs().max(hi.abs()),
            alpha: lo.max(0.0),
            kind: PotentialKind::ProductNonGaussian { curvature, bump },
            tilt: None,
        })
    }

    pub fn with_tilt(mut self, tilt: Vec<f64>) -> Result<Self> {
        if tilt.len() != self.dim {
            return domain("tilt dimension mismatch");
        }
        check_params(&tilt, "tilt")?;
        self.tilt = Some(tilt);
        Ok(self)
    }

    /// True when the Hessian is constant.
    pub fn is_quadratic(&self) -> bool {
        matches!(
            self.kind,
            PotentialKind::IsotropicQuadratic { .. } | PotentialKind::AnisotropicQuadratic { .. }
        )
    }

    /// Diagonal of the constant Hessian for quadratic kinds.
    pub fn quadratic_spectrum(&self) -> Option<Vec<f64>> {
        match &self.kind {
            PotentialKind::IsotropicQuadratic { scale } => Some(vec![*scale; self.dim]),
            PotentialKind::AnisotropicQuadratic { spectrum } => Some(spectrum.clone()),
            _ => None,
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return domain(format!("expected dimension {}, got {}", self.dim, x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return domain("non-finite input");
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let mut v = match &self.kind {
            PotentialKind::IsotropicQuadratic { scale } => {
                0.5 * scale * x.iter().map(|a| a * a).sum::<f64>()
            }
            PotentialKind::AnisotropicQuadratic { spectrum } => {
                0.5 * spectrum.iter().zip(x).map(|(l, a)| l * a * a).sum::<f64>()
            }
            PotentialKind::PerturbedQuadratic {
                spectrum,
                amplitude,
                frequency,
            } => {
                let q = 0.5 * spectrum.iter().zip(x).map(|(l, a)| l * a * a).sum::<f64>();
                let c: f64 = x.iter().map(|a| (frequency * a).cos()).sum();
                let s = x.iter().sum::<f64>() / (self.dim as f64).sqrt();
                q + amplitude * (c + (frequency * s).cos())
            }
            PotentialKind::ProductNonGaussian { curvature, bump } => x
                .iter()
                .map(|a| 0.5 * curvature * a * a + bump * log_cosh(*a))
                .sum(),
        };
        if let Some(g) = &self.tilt {
            v += g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(v)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.gradient_into(x, &mut out)?;
        Ok(out)
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_input(x)?;
        match &self.kind {
            PotentialKind::IsotropicQuadratic { scale } => {
                for (o, a) in out.iter_mut().zip(x) {
                    *o = scale * a;
                }
            }
            PotentialKind::AnisotropicQuadratic { spectrum } => {
                for ((o, a), l) in out.iter_mut().zip(x).zip(spectrum) {
                    *o = l * a;
                }
            }
            PotentialKind::PerturbedQuadratic {
                spectrum,
                amplitude,
                frequency,
            } => {
                let rd = 1.0 / (self.dim as f64).sqrt();
                let s = x.iter().sum::<f64>() * rd;
                let coupled = -amplitude * frequency * (frequency * s).sin() * rd;
                for ((o, a), l) in out.iter_mut().zip(x).zip(spectrum) {
                    *o = l * a - amplitude * frequency * (frequency * a).sin() + coupled;
                }
            }
            PotentialKind::ProductNonGaussian { curvature, bump } => {
                for (o, a) in out.iter_mut().zip(x) {
                    *o = curvature * a + bump * a.tanh();
                }
            }
        }
        if let Some(g) = &self.tilt {
            for (o, t) in out.iter_mut().zip(g) {
                *o += t;
            }
        }
        Ok(())
    }

    pub fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let d = self.dim;
        let h = match &self.kind {
            PotentialKind::IsotropicQuadratic { scale } => {
                DMatrix::from_diagonal_element(d, d, *scale)
            }
            PotentialKind::AnisotropicQuadratic { spectrum } => {
                DMatrix::from_fn(d, d, |i, j| if i == j { spectrum[i] } else { 0.0 })
            }
            PotentialKind::PerturbedQuadratic {
                spectrum,
                amplitude,
                frequency,
            } => {
                let w2 = frequency * frequency;
                let s = x.iter().sum::<f64>() / (d as f64).sqrt();
                let coupled = -amplitude * w2 * (frequency * s).cos() / d as f64;
                DMatrix::from_fn(d, d, |i, j| {
                    let diag = if i == j {
                        spectrum[i] - amplitude * w2 * (frequency * x[i]).cos()
                    } else {
                        0.0
                    };
                    diag + coupled
                })
            }
            PotentialKind::ProductNonGaussian { curvature, bump } => {
                DMatrix::from_fn(d, d, |i, j| {
                    if i == j {
                        let t = x[i].tanh();
                        curvature + bump * (1.0 - t * t)
                    } else {
                        0.0
                    }
                })
            }
        };
        Ok(h)
    }
}

fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}
