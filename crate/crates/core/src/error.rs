use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value produced or consumed by {0}")]
    NonFinite(&'static str),

    #[error("degenerate mask: at least one entry must be live")]
    DegenerateMask,

    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalar(Vec<usize>),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),

    #[error("no available action")]
    NoAvailableAction,

    #[error("step called on a terminated episode")]
    EpisodeOver,

    #[error("invalid action {action} for agent {agent}")]
    InvalidAction { agent: usize, action: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("joint policy space too large for enumeration ({0} sequences)")]
    SpaceTooLarge(f64),

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(
        "parameter structure mismatch: missing {missing:?}, extra {extra:?}, reshaped {reshaped:?}"
    )]
    StructureMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
        reshaped: Vec<String>,
    },

    #[error("{0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
