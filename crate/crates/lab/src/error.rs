use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing required key '{0}'")]
    Missing(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("step-size bound violated: {0}")]
    StepBound(String),
    #[error(transparent)]
    Core(#[from] midpoint_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
