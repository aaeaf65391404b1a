//! Midpoint Langevin integrators and anticipating change-of-measure weights.

pub mod divergence;
pub mod error;
pub mod expint;
pub mod girsanov;
pub mod grid;
pub mod linalg;
pub mod local_error;
pub mod mc;
pub mod ou;
pub mod overdamped;
pub mod potential;
pub mod scheme;
pub mod underdamped;

pub use error::{Error, Result};
