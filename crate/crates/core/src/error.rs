use std::io;

use thiserror::Error;

pub type Result<T, E = CutError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CutError {
    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// Two tensors or collections disagree on a structural invariant.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("step index {t} out of range 1..={steps}")]
    StepIndex { t: usize, steps: usize },

    /// The backend cannot accept the requested latent size.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("transport failure on request {request_id}: {source}")]
    Transport {
        request_id: u64,
        #[source]
        source: io::Error,
    },

    #[error("protocol violation: {0}")]
    Protocol(String),

    /// A denoiser call failed inside a pipeline run.
    #[error("{phase} step t={t}, patch {patch}: {source}")]
    Backend {
        phase: &'static str,
        t: usize,
        patch: usize,
        #[source]
        source: Box<CutError>,
    },

    #[error("statistics: {0}")]
    Stats(String),

    #[error("latent file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CutError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CutError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            CutError::Config { .. } => 2,
            CutError::Transport { .. } | CutError::Protocol(_) | CutError::Capacity(_) | CutError::Backend { .. } => 3,
            _ => 1,
        }
    }
}
