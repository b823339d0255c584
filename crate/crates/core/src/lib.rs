//! Learning-based model predictive control for piecewise-affine systems.

pub mod benchmarks;
pub mod control;
pub mod error;
pub mod geometry;
pub mod lp;
pub mod mpc;
pub mod policy;
pub mod pwa;
pub mod terminal;
pub mod trainer;

pub use error::{Error, Result};
