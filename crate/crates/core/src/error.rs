use thiserror::Error;

use crate::phase::PhaseSystem;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index ({i}, {j}) outside a {nx}x{ny} grid")]
    IndexOutOfRange { i: usize, j: usize, nx: usize, ny: usize },

    #[error("shape does not fit inside the box: {0}")]
    Domain(String),

    #[error(
        "eigensolver did not converge after {applications} operator applications \
         (best residual {best_residual:.3e}, target {target:.3e})"
    )]
    NotConverged {
        applications: usize,
        best_residual: f64,
        target: f64,
    },

    /// The requested eigenvalue sits in a cluster, so its derivative is not defined.
    #[error("eigenvalue {k} is clustered (relative gap {gap:.3e}); derivative is only a subgradient")]
    ClusteredEigenvalue { k: usize, gap: f64 },

    #[error("phase {phase}: {source}")]
    Phase {
        phase: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("linesearch trial with step {gamma:.3e}: {source}")]
    Trial {
        gamma: f64,
        #[source]
        source: Box<Error>,
    },

    /// Optimization stopped early; `checkpoint` is the last accepted iterate.
    #[error("optimization aborted at iteration {iteration}: {source}")]
    Aborted {
        iteration: usize,
        checkpoint: Box<PhaseSystem>,
        #[source]
        source: Box<Error>,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("bad checkpoint: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn phase(phase: usize, source: Error) -> Self {
        Error::Phase {
            phase,
            source: Box::new(source),
        }
    }
}
