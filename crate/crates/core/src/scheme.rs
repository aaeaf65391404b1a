//! Scheme selection and whole-path simulation.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{MidpointSchedule, NoisePath};
use crate::overdamped::{simulate_od, OdTrajectory};
use crate::potential::PotentialModel;
use crate::underdamped::{simulate_ud, UdSchedule, UdTrajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    EmLd,
    Mlmc,
    Ulmc,
    DmUlmc,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::EmLd, Scheme::Mlmc, Scheme::Ulmc, Scheme::DmUlmc];

    pub fn is_underdamped(&self) -> bool {
        matches!(self, Scheme::Ulmc | Scheme::DmUlmc)
    }

    /// Gradient queries per outer step of the algorithm itself.
    pub fn queries_per_step(&self) -> usize {
        match self {
            Scheme::EmLd | Scheme::Ulmc => 1,
            Scheme::Mlmc => 2,
            Scheme::DmUlmc => 3,
        }
    }

    /// Name of the diffusion the scheme is compared with.
    pub fn reference(&self) -> &'static str {
        if self.is_underdamped() {
            "ULD"
        } else {
            "LD"
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::EmLd => "EM-LD",
            Scheme::Mlmc => "M-LMC",
            Scheme::Ulmc => "ULMC",
            Scheme::DmUlmc => "DM-ULMC",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "EM-LD" | "EM" | "LMC" => Ok(Scheme::EmLd),
            "M-LMC" | "MLMC" => Ok(Scheme::Mlmc),
            "ULMC" => Ok(Scheme::Ulmc),
            "DM-ULMC" | "DMULMC" => Ok(Scheme::DmUlmc),
            other => Err(Error::Domain(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Everything needed to run one scheme along a noise path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeSpec {
    pub scheme: Scheme,
    pub schedule: MidpointSchedule,
    /// Friction, used by the underdamped schemes.
    pub gamma: f64,
}

impl SchemeSpec {
    pub fn new(scheme: Scheme, schedule: MidpointSchedule, gamma: f64) -> Self {
        Self {
            scheme,
            schedule,
            gamma,
        }
    }

    /// Default midpoints: `h/2` for M-LMC, `(h/3, h/2)` for DM-ULMC.
    pub fn deterministic(scheme: Scheme, gamma: f64) -> Self {
        let schedule = match scheme {
            Scheme::DmUlmc => MidpointSchedule::DeterministicUd,
            Scheme::EmLd | Scheme::Ulmc => MidpointSchedule::DeterministicOd { fraction: 0.0 },
            Scheme::Mlmc => MidpointSchedule::DeterministicOd { fraction: 0.5 },
        };
        Self {
            scheme,
            schedule,
            gamma,
        }
    }

    pub fn od_schedule(&self) -> MidpointSchedule {
        match self.scheme {
            Scheme::EmLd => MidpointSchedule::DeterministicOd { fraction: 0.0 },
            _ => self.schedule,
        }
    }

    pub fn ud_schedule(&self) -> UdSchedule {
        match self.scheme {
            Scheme::Ulmc => UdSchedule::Ulmc,
            _ => UdSchedule::Midpoint(self.schedule),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Trajectory {
    Od(OdTrajectory),
    Ud(UdTrajectory),
}

impl Trajectory {
    pub fn grad_queries(&self) -> usize {
        match self {
            Trajectory::Od(t) => t.grad_queries,
            Trajectory::Ud(t) => t.grad_queries,
        }
    }

    /// Final position.
    pub fn final_x(&self) -> &[f64] {
        let (x, d) = match self {
            Trajectory::Od(t) => (&t.x, t.dim),
            Trajectory::Ud(t) => (&t.x, t.dim),
        };
        &x[x.len() - d..]
    }

    /// Final `(x, p)` concatenated, or `x` for overdamped runs.
    pub fn final_state(&self) -> Vec<f64> {
        match self {
            Trajectory::Od(t) => t.x[t.x.len() - t.dim..].to_vec(),
            Trajectory::Ud(t) => {
                let mut s = t.x[t.x.len() - t.dim..].to_vec();
                s.extend_from_slice(&t.p[t.p.len() - t.dim..]);
                s
            }
        }
    }
}

/// Simulates the scheme. `state0` is `x0` for overdamped schemes and
/// `(x0, p0)` concatenated for underdamped ones.
pub fn simulate(
    spec: &SchemeSpec,
    v: &PotentialModel,
    state0: &[f64],
    path: &NoisePath,
) -> Result<Trajectory> {
    let d = v.dim;
    if spec.scheme.is_underdamped() {
        if state0.len() != 2 * d {
            return Err(Error::GridMismatch(
                "underdamped start needs (x0, p0)".into(),
            ));
        }
        let t = simulate_ud(
            v,
            spec.gamma,
            &spec.ud_schedule(),
            &state0[..d],
            &state0[d..],
            path,
        )?;
        Ok(Trajectory::Ud(t))
    } else {
        Ok(Trajectory::Od(simulate_od(
            v,
            &spec.od_schedule(),
            state0,
            path,
        )?))
    }
}
