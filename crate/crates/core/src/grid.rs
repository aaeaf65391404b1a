//! Time grids, counter-based Gaussian noise paths and midpoint schedules.

use std::io::{Read, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{domain, Error, Result};

/// Stream purposes mixed into the ChaCha stream id so that different uses of
/// one `(seed, stream)` pair never share random words.
pub mod purpose {
    pub const NOISE: u64 = 0;
    pub const REFINE: u64 = 1;
    pub const SCHEDULE: u64 = 2;
    pub const RESIDUAL: u64 = 3;
    pub const INITIAL: u64 = 4;
}

/// Words reserved per cell for [`CellRng::cell`], whose consumption varies.
const WORDS_PER_CELL: u128 = 1 << 20;

/// Words used by one cell of `n` normals: one `u64` pair per two normals.
fn normal_stride(n: usize) -> u128 {
    4 * n.div_ceil(2) as u128
}

/// Box-Muller from a fixed number of words, so cells can be addressed
/// by position and consecutive cells read in one sweep.
fn fill_normals(r: &mut ChaCha8Rng, out: &mut [f64]) {
    let unit = (-53f64).exp2();
    for pair in out.chunks_mut(2) {
        let u1 = ((r.next_u64() >> 11) + 1) as f64 * unit;
        let u2 = (r.next_u64() >> 11) as f64 * unit;
        let rad = (-2.0 * u1.ln()).sqrt();
        let (sin, cos) = (std::f64::consts::TAU * u2).sin_cos();
        pair[0] = rad * cos;
        if let Some(z) = pair.get_mut(1) {
            *z = rad * sin;
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_stream(stream: u64, purpose: u64, level: u64) -> u64 {
    splitmix(splitmix(stream ^ splitmix(purpose)) ^ level.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Counter-based generator: the draws for `(seed, stream, cell)` do not depend
/// on which other cells were generated or in what order.
#[derive(Clone)]
pub struct CellRng {
    base: ChaCha8Rng,
}

impl CellRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut base = ChaCha8Rng::seed_from_u64(seed);
        base.set_stream(stream);
        Self { base }
    }

    pub fn cell(&self, index: u64) -> ChaCha8Rng {
        let mut r = self.base.clone();
        r.set_word_pos(index as u128 * WORDS_PER_CELL);
        r
    }

    /// Normals of cell `index`. All cells of one stream must have the same
    /// length.
    pub fn normals(&self, index: u64, out: &mut [f64]) {
        let mut r = self.base.clone();
        r.set_word_pos(index as u128 * normal_stride(out.len()));
        fill_normals(&mut r, out);
    }

    /// Cells `first, first + 1, ...` of `dim` normals each; the same values
    /// as calling [`CellRng::normals`] per cell.
    pub fn normals_run(&self, first: u64, dim: usize, out: &mut [f64]) {
        let mut r = self.base.clone();
        r.set_word_pos(first as u128 * normal_stride(dim));
        for chunk in out.chunks_mut(dim) {
            fill_normals(&mut r, chunk);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_final: f64,
    pub n_steps: usize,
    pub m: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_steps: usize, m: usize) -> Result<Self> {
        if !(t_final.is_finite() && t_final > 0.0) {
            return domain("T must be positive and finite");
        }
        if n_steps == 0 {
            return domain("N must be positive");
        }
        if m == 0 || !m.is_power_of_two() {
            return domain(format!("m must be a power of two, got {m}"));
        }
        Ok(Self {
            t_final,
            n_steps,
            m,
        })
    }

    pub fn h(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    pub fn eta(&self) -> f64 {
        self.h() / self.m as f64
    }

    pub fn cells(&self) -> usize {
        self.n_steps * self.m
    }

    pub fn refine(&self) -> Self {
        Self {
            m: 2 * self.m,
            ..*self
        }
    }
}

/// Standard normal increments `xi`, one `dim`-vector per inner cell; the
/// Brownian increment of cell `c` is `sqrt(eta) * xi[c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub dim: usize,
    pub grid: TimeGrid,
    pub seed: u64,
    pub stream: u64,
    /// Number of bridge refinements applied since sampling.
    pub level: u32,
    /// Row-major `(cell, dim)`.
    pub xi: Vec<f64>,
}

impl NoisePath {
    pub fn sample(grid: TimeGrid, dim: usize, seed: u64, stream: u64) -> Result<Self> {
        if dim == 0 {
            return domain("dimension must be positive");
        }
        let rng = CellRng::new(seed, derive_stream(stream, purpose::NOISE, 0));
        let mut xi = vec![0.0; grid.cells() * dim];
        rng.normals_run(0, dim, &mut xi);
        Ok(Self {
            dim,
            grid,
            seed,
            stream,
            level: 0,
            xi,
        })
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        Self {
            dim,
            grid,
            seed: 0,
            stream: 0,
            level: 0,
            xi: vec![0.0; grid.cells() * dim],
        }
    }

    pub fn from_values(grid: TimeGrid, dim: usize, xi: Vec<f64>) -> Result<Self> {
        if xi.len() != grid.cells() * dim {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                grid.cells() * dim,
                xi.len()
            )));
        }
        Ok(Self {
            dim,
            grid,
            seed: 0,
            stream: 0,
            level: 0,
            xi,
        })
    }

    /// Noise of cell `i` of outer step `k`.
    pub fn cell(&self, k: usize, i: usize) -> &[f64] {
        let c = k * self.grid.m + i;
        &self.xi[c * self.dim..(c + 1) * self.dim]
    }

    /// All cells of outer step `k`, row-major `(cell, dim)`.
    pub fn step(&self, k: usize) -> &[f64] {
        let w = self.grid.m * self.dim;
        &self.xi[k * w..(k + 1) * w]
    }

    /// Brownian-bridge midpoint split of every cell. Merging the two halves
    /// (`(a + b) / sqrt 2`) recovers the parent noise up to rounding.
    pub fn refine(&self) -> NoisePath {
        let d = self.dim;
        let rng = CellRng::new(
            self.seed,
            derive_stream(self.stream, purpose::REFINE, self.level as u64),
        );
        let mut xi = vec![0.0; 2 * self.xi.len()];
        let mut zs = vec![0.0; self.xi.len()];
        rng.normals_run(0, d, &mut zs);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        for (c, (parent, z)) in self.xi.chunks(d).zip(zs.chunks(d)).enumerate() {
            for k in 0..d {
                xi[2 * c * d + k] = (parent[k] + z[k]) * r;
                xi[(2 * c + 1) * d + k] = (parent[k] - z[k]) * r;
            }
        }
        NoisePath {
            dim: d,
            grid: self.grid.refine(),
            seed: self.seed,
            stream: self.stream,
            level: self.level + 1,
            xi,
        }
    }

    /// Inverse of [`NoisePath::refine`].
    pub fn coarsen(&self) -> Result<NoisePath> {
        if self.grid.m < 2 {
            return Err(Error::GridMismatch("cannot coarsen m = 1".into()));
        }
        let d = self.dim;
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let mut xi = vec![0.0; self.xi.len() / 2];
        for (c, out) in xi.chunks_mut(d).enumerate() {
            for k in 0..d {
                out[k] = (self.xi[2 * c * d + k] + self.xi[(2 * c + 1) * d + k]) * r;
            }
        }
        Ok(NoisePath {
            dim: d,
            grid: TimeGrid {
                m: self.grid.m / 2,
                ..self.grid
            },
            seed: self.seed,
            stream: self.stream,
            level: self.level.saturating_sub(1),
            xi,
        })
    }

    /// `B` on the inner grid: `(N m + 1) x d`, row 0 is zero.
    pub fn brownian_partial_sums(&self) -> Vec<f64> {
        let d = self.dim;
        let se = self.grid.eta().sqrt();
        let mut out = vec![0.0; (self.grid.cells() + 1) * d];
        for c in 0..self.grid.cells() {
            for k in 0..d {
                out[(c + 1) * d + k] = out[c * d + k] + se * self.xi[c * d + k];
            }
        }
        out
    }

    /// Binary dump: little-endian u64 header `(d, N, m, seed, stream, level)`, then
    /// the f64 values row-major.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let io = |e: std::io::Error| Error::Io(e.to_string());
        for v in [
            self.dim as u64,
            self.grid.n_steps as u64,
            self.grid.m as u64,
            self.seed,
            self.stream,
            self.level as u64,
        ] {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        for v in &self.xi {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read, t_final: f64) -> Result<Self> {
        let io = |e: std::io::Error| Error::Io(e.to_string());
        let mut b = [0u8; 8];
        let mut head = [0u64; 6];
        for h in head.iter_mut() {
            r.read_exact(&mut b).map_err(io)?;
            *h = u64::from_le_bytes(b);
        }
        let grid = TimeGrid::new(t_final, head[1] as usize, head[2] as usize)?;
        let d = head[0] as usize;
        let mut xi = vec![0.0; grid.cells() * d];
        for v in xi.iter_mut() {
            r.read_exact(&mut b).map_err(io)?;
            *v = f64::from_le_bytes(b);
        }
        Ok(Self {
            dim: d,
            grid,
            seed: head[3],
            stream: head[4],
            level: head[5] as u32,
            xi,
        })
    }
}

/// Where inside each outer step the midpoint gradients are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MidpointSchedule {
    /// Single midpoint `tau = fraction * h`.
    DeterministicOd { fraction: f64 },
    /// `tau- = h/3`, `tau+ = h/2`.
    DeterministicUd,
    /// Midpoints drawn uniformly from the inner grid points in `[0, h)`,
    /// independently per step. For the two-point schedule the pair is sorted.
    RandomizedUniform { seed: u64, stream: u64 },
}

fn snap(tau: f64, eta: f64, m: usize) -> usize {
    ((tau / eta).round() as usize).min(m)
}

impl MidpointSchedule {
    /// Grid index `t` with `tau = t * eta`, for single-midpoint schemes.
    pub fn od_index(&self, step: usize, grid: &TimeGrid) -> Result<usize> {
        match *self {
            MidpointSchedule::DeterministicOd { fraction } => {
                if !(0.0..=1.0).contains(&fraction) {
                    return domain(format!("midpoint fraction {fraction} outside [0, 1]"));
                }
                Ok(snap(fraction * grid.h(), grid.eta(), grid.m))
            }
            MidpointSchedule::DeterministicUd => Ok(snap(0.5 * grid.h(), grid.eta(), grid.m)),
            MidpointSchedule::RandomizedUniform { seed, stream } => {
                let mut r = CellRng::new(seed, derive_stream(stream, purpose::SCHEDULE, 0))
                    .cell(step as u64);
                Ok(r.random_range(0..grid.m))
            }
        }
    }

    /// Grid indices `(t-, t+)` for the two-midpoint underdamped scheme.
    pub fn ud_indices(&self, step: usize, grid: &TimeGrid) -> Result<(usize, usize)> {
        match *self {
            MidpointSchedule::DeterministicOd { .. } => {
                let t = self.od_index(step, grid)?;
                Ok((t, t))
            }
            MidpointSchedule::DeterministicUd => Ok((
                snap(grid.h() / 3.0, grid.eta(), grid.m),
                snap(grid.h() / 2.0, grid.eta(), grid.m),
            )),
            MidpointSchedule::RandomizedUniform { seed, stream } => {
                let mut r = CellRng::new(seed, derive_stream(stream, purpose::SCHEDULE, 1))
                    .cell(step as u64);
                let a = r.random_range(0..grid.m);
                let b = r.random_range(0..grid.m);
                Ok((a.min(b), a.max(b)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_basics() {
        let g = TimeGrid::new(1.0, 4, 8).unwrap();
        assert_eq!(g.h(), 0.25);
        assert_eq!(g.eta(), 0.25 / 8.0);
        assert_eq!(g.refine().m, 16);
        assert!(TimeGrid::new(1.0, 4, 6).is_err());
        assert!(TimeGrid::new(-1.0, 4, 8).is_err());
    }

    #[test]
    fn partial_sums_of_ones() {
        // eta = 0.25
        let g = TimeGrid::new(2.0, 2, 4).unwrap();
        let p = NoisePath::from_values(g, 1, vec![1.0; 8]).unwrap();
        let b = p.brownian_partial_sums();
        assert_eq!(b[0], 0.0);
        assert!((b[8] - 0.5 * 8.0).abs() < 1e-15);
    }

    #[test]
    fn ud_snapping() {
        let g = TimeGrid::new(1.0, 1, 8).unwrap();
        let (a, b) = MidpointSchedule::DeterministicUd.ud_indices(0, &g).unwrap();
        assert_eq!((a, b), (3, 4));
        assert!((a as f64 * g.eta() - 1.0 / 3.0).abs() <= g.eta() / 2.0);
    }
}
