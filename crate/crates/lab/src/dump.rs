//! Debug dumps of noise paths and Malliavin blocks.

use std::fmt::Write as _;

use midpoint_core::girsanov::{analyze_path, Detail, MalliavinBlocks, SolverOptions};
use midpoint_core::grid::NoisePath;

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};
use crate::experiments::{sample_start, start_moments};
use crate::report::fmt_num;

/// Noise path `index` of the config's first step size.
pub fn config_path(cfg: &ExperimentConfig, index: u64) -> Result<NoisePath> {
    let h = *cfg
        .hs
        .first()
        .ok_or_else(|| LabError::Missing("grid.n or grid.h".into()))?;
    let scheme = cfg.schemes[0];
    let grid = midpoint_core::grid::TimeGrid::new(
        cfg.t_final.unwrap_or(h),
        cfg.steps(h)?,
        cfg.m_for(scheme),
    )?;
    Ok(NoisePath::sample(grid, cfg.dim(), cfg.seed, index)?)
}

/// Malliavin blocks of path `index` under the config's first scheme and
/// step size. One `# block k l` section per nonzero block, rows on their
/// own lines.
pub fn blocks_text(cfg: &ExperimentConfig, index: u64) -> Result<String> {
    let v = cfg.potential()?;
    let scheme = cfg.schemes[0];
    let path = config_path(cfg, index)?;
    let s0 = sample_start(cfg, &start_moments(cfg, &v, scheme)?, index);
    let a = analyze_path(
        &cfg.spec(scheme, index),
        &v,
        &s0,
        &path,
        SolverOptions::default(),
        Detail::Full,
    )?;
    let blocks = MalliavinBlocks::from_steps(&a.steps, true)?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# scheme={scheme} d={} n_steps={} m={} path={index}",
        v.dim, path.grid.n_steps, path.grid.m
    );
    let mut put = |k: usize, l: usize, b: &nalgebra::DMatrix<f64>| {
        let _ = writeln!(out, "# block {k} {l} ({}x{})", b.nrows(), b.ncols());
        for r in 0..b.nrows() {
            let row: Vec<String> = (0..b.ncols()).map(|c| fmt_num(b[(r, c)])).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    };
    for (k, b) in blocks.diag.iter().enumerate() {
        put(k, k, b);
        if let Some(off) = &blocks.off {
            for (l, b) in off[k].iter().enumerate() {
                put(k, l, b);
            }
        }
    }
    Ok(out)
}
