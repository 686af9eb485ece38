//! Sample-adaptive point-cloud corruption imitation and robustness training.
//!
//! The crate bundles a deterministic corruption benchmark generator, a
//! differentiable corruption imitator (per-anchor deformation plus a learned
//! point mask), the imitator/discriminator/classifier co-training loop, and
//! mCE-based robustness evaluation.

pub mod cli;
pub mod config;
pub mod corruptions;
pub mod data_io;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod geom;
pub mod imitator;
pub mod matrix;
pub mod models;
pub mod nn;
pub mod render;
pub mod rng;
pub mod simulator;
pub mod training;

pub use error::{Error, Result};
pub use geom::{EulerAngles, PointCloud};
pub use matrix::Matrix;
pub use rng::RngStream;
