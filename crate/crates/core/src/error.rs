use thiserror::Error;

pub type Result<T> = std::result::Result<T, MfgError>;

#[derive(Debug, Error)]
pub enum MfgError {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("iteration budget exhausted in {stage} after {iterations} iterations (last residual {last_residual:.3e})")]
    NonConvergence {
        stage: &'static str,
        iterations: usize,
        last_residual: f64,
        history: Vec<f64>,
    },

    #[error("singular coupling at node {node}: m + eps = {value:e}")]
    Singularity { node: usize, value: f64 },

    #[error("degenerate Fokker-Planck kernel: second eigenvalue estimate {lambda2:.3e}")]
    DegenerateKernel { lambda2: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
}

impl MfgError {
    pub fn validation(msg: impl Into<String>) -> Self {
        MfgError::Validation(msg.into())
    }

    /// Process exit code used by the `smfg` binary and the C status codes.
    pub fn exit_code(&self) -> i32 {
        match self {
            MfgError::Validation(_) | MfgError::Json(_) => 2,
            MfgError::NonConvergence { .. } | MfgError::DegenerateKernel { .. } | MfgError::Numeric(_) => 3,
            MfgError::Singularity { .. } => 4,
            MfgError::Io(_) => 1,
        }
    }

    /// Short machine-parsable tag, printed as the first token of the error line.
    pub fn kind(&self) -> &'static str {
        match self {
            MfgError::Validation(_) | MfgError::Json(_) => "validation",
            MfgError::NonConvergence { .. } => "nonconvergence",
            MfgError::DegenerateKernel { .. } => "degenerate",
            MfgError::Numeric(_) => "numeric",
            MfgError::Singularity { .. } => "singularity",
            MfgError::Io(_) => "io",
        }
    }
}
