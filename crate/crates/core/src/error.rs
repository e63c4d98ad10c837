//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix handed to `vee` is not skew-symmetric within tolerance.
    #[error("matrix is not skew-symmetric (residual {0:.3e})")]
    NotSkew(f64),

    /// A matrix handed to a `Rotation` constructor fails the group invariants.
    #[error("matrix is not a rotation ({0})")]
    NotRotation(String),

    /// `log_so3` called with a rotation angle within 1e-6 of pi.
    #[error("rotation angle {angle:.9} is within 1e-6 of pi; Log is undefined there")]
    NearAntipodal { angle: f64 },

    /// Gram-Schmidt input with a vanishing or parallel column pair.
    #[error("degenerate 6D representation: {0}")]
    Degenerate6d(&'static str),

    /// Singular input where an invertible matrix is required.
    #[error("matrix is singular or nearly singular (min singular value {0:.3e})")]
    Singular(f64),

    /// Savitzky-Golay normal matrix too ill-conditioned to solve.
    #[error("ill-conditioned SG normal matrix (condition number {0:.3e})")]
    IllConditioned(f64),

    /// A window-level failure during path fitting, tagged with the anchor index.
    #[error("SG window at anchor {index} failed: {source}")]
    Window {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    /// Query before the start of a control path's support.
    #[error("query time {t} precedes path support start {t0}")]
    OutOfSupport { t: f64, t0: f64 },

    /// Adaptive solver drove the step size below the floor.
    #[error("adaptive solver step underflow at t={t} (h={h:.3e}); system too stiff")]
    SolverStiff { t: f64, h: f64 },

    /// Tensor shape mismatch in the autodiff engine.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// API misuse (e.g. backward on a non-scalar).
    #[error("usage error: {0}")]
    Usage(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss ({loss}) in batch {batch}")]
    Diverged { batch: usize, loss: f64 },

    /// Invalid configuration (files or flags).
    #[error("invalid config: {0}")]
    Config(String),

    /// File format problems while reading trajectories or checkpoints.
    #[error("parse error in {what}: {detail}")]
    Parse { what: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors a CLI should map to the config exit code (2) rather
    /// than the runtime exit code (3).
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
