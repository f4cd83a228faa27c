use thiserror::Error;

use crate::lattice::Site;

/// Errors raised by the lattice laboratory.
///
/// Variants split into two groups that the command line maps onto distinct
/// exit codes: input/validation problems and numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("site ({}, {}) is outside the lattice with half width {half_width}", site.i, site.j)]
    Index { site: Site, half_width: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: expected {expected} cells, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("amplitude {r:.6e} at site ({}, {}) is below the singularity guard {r_min:.6e}", site.i, site.j)]
    Singularity { site: Site, r: f64, r_min: f64 },

    #[error("amplitude left the admissible band ({lo:.6}, {hi:.6}) at site ({}, {}): r = {r:.6e}", site.i, site.j)]
    OutOfBand { site: Site, r: f64, lo: f64, hi: f64 },

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("no convergence after {iterations} iterations (best residual {best_residual:.3e})")]
    NonConvergence { iterations: usize, best_residual: f64 },

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported snapshot version {found} (expected {expected})")]
    Version { found: String, expected: u32 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by bad input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Index { .. }
                | Error::Parameter(_)
                | Error::Shape { .. }
                | Error::Parse { .. }
                | Error::Version { .. }
                | Error::Config(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
