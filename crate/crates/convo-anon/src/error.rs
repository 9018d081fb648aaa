use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("zero-norm vector `{0}`")]
    ZeroNorm(String),

    #[error("empty collection: {0}")]
    EmptyCollection(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("search space too large: {combinations} candidate tuples exceed the {limit} guard")]
    SearchSpaceTooLarge { combinations: u128, limit: u128 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("undefined rate: {0}")]
    UndefinedRate(String),

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Tag an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// True for errors that should map to the config-error exit status.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::InvalidConfig(_) => true,
            Error::Stage { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
