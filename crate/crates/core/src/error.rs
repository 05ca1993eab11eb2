use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("solution blew up at t = {time} (step {step})")]
    BlowUp { time: f64, step: usize },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("resolution mismatch: model trained at dx = {trained}, data has dx = {given}; learned operators are specific to the grid resolution they were trained on")]
    ResolutionMismatch { trained: f64, given: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
