//! Continuous-time rotational forecasting on SO(3).
//!
//! The crate filters noisy rotation sequences into smooth manifold-respecting
//! control paths with a Savitzky-Golay regression in the Lie algebra, learns
//! a latent dynamical system driven by those paths (a neural controlled
//! differential equation), and extrapolates future orientations. It ships
//! with a rigid-body simulator for generating training data, a minimal
//! reverse-mode autodiff engine, baseline forecasters, and an evaluation
//! harness, all wired into the `so3cast` CLI.
//!
//! Module map:
//! - [`so3`]: rotation-group primitives (hat/vee, Exp/Log, 6D/9D
//!   representations, metric, sampling).
//! - [`sg`]: Savitzky-Golay regression on SO(3) and the resulting control
//!   paths.
//! - [`sim`]: rotational rigid-body dynamics, torque scenarios, corruption
//!   models, trajectory CSV I/O.
//! - [`nn`]: tape-based reverse-mode autodiff, layers, Adam, checkpoints.
//! - [`forecast`]: the SG-nCDE forecaster, its training loop, and baselines.
//! - [`eval`]: dataset construction, metrics, and model comparison tables.

pub mod error;
pub mod eval;
pub mod forecast;
pub mod nn;
pub mod sg;
pub mod sim;
pub mod so3;

pub use error::{Error, Result};
