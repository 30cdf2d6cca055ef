use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op} requires a non-empty input")]
    Empty { op: &'static str },

    #[error("backward root must be a scalar, got {len} elements")]
    NotScalar { len: usize },

    #[error("variable does not belong to this tape")]
    ForeignVar,

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("prefix of length {len} is too long for a {dims}-dimensional action space")]
    PrefixTooLong { len: usize, dims: usize },

    #[error("state has {got} entries, model expects {expected}")]
    StateDim { expected: usize, got: usize },

    #[error("enumeration needs {required} actions, cap is {cap}")]
    BudgetExceeded { required: u128, cap: u64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("covariance matrix is not symmetric positive definite")]
    NotSpd,

    #[error("step called on a finished episode")]
    EpisodeDone,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
