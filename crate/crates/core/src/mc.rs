//! Deterministic parallel Monte Carlo over independent paths.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{derive_stream, purpose, CellRng};

/// Evaluates `f(i)` for `i < n` on a pool of `threads` workers. Results come
/// back in index order, so any later reduction is independent of scheduling.
pub fn run_indexed<T, F>(n: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Unsupported(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().with_min_len(64).map(&f).collect()))
}

/// Standard normal start vector for path `index`, scaled by `scale`.
pub fn initial_state(seed: u64, index: u64, dim: usize, scale: f64) -> Vec<f64> {
    let rng = CellRng::new(seed, derive_stream(index, purpose::INITIAL, 0));
    let mut out = vec![0.0; dim];
    rng.normals(0, &mut out);
    out.iter_mut().for_each(|a| *a *= scale);
    out
}
