//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HumofError>;

#[derive(Debug, Error)]
pub enum HumofError {
    /// No scene point survived the crop around the target root.
    #[error("empty-scene: no scene point within {radius} m of the target root")]
    EmptyScene { radius: f64 },

    #[error("bad-container: {0}")]
    BadContainer(String),

    #[error("corrupt-container: {0}")]
    CorruptContainer(String),

    #[error("bad-length: {0}")]
    BadLength(String),

    #[error("bad-truncation: requested {coeffs} coefficients from a series of length {len}")]
    BadTruncation { coeffs: usize, len: usize },

    #[error("bad-sigma: sigma must be positive, got {0}")]
    BadSigma(f64),

    #[error("bad-shape: {0}")]
    BadShape(String),

    #[error("no-local-joints: a skeleton needs at least one non-root joint")]
    NoLocalJoints,

    #[error("bad-horizon: {seconds} s maps to frame {frame}, beyond the forecast length {horizon}")]
    BadHorizon {
        seconds: f64,
        frame: usize,
        horizon: usize,
    },

    #[error("bad-scenario: {0}")]
    BadScenario(String),

    #[error("invalid-config: {0}")]
    InvalidConfig(String),

    #[error("diverged: non-finite loss at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },

    #[error("incompatible-checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("gradcheck failed: worst relative error {worst:.3e} on `{name}`")]
    GradcheckFailed { name: String, worst: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HumofError {
    /// Process exit code for the CLI: 2 for validation problems, 3 for
    /// numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HumofError::Diverged { .. } | HumofError::GradcheckFailed { .. } => 3,
            HumofError::Io(_) => 1,
            _ => 2,
        }
    }
}
