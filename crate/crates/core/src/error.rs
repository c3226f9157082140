use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A state key could not be formed from its components.
    #[error("state key formation: {0}")]
    StateKey(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A trajectory or trajectory set violates a structural invariant.
    #[error("validation: {0}")]
    Validation(String),

    #[error("aggregation: {0}")]
    Aggregation(String),

    /// A precondition on an operation's input does not hold.
    #[error("precondition: {0}")]
    Precondition(String),

    #[error("unknown state key {0}")]
    UnknownState(String),

    /// A numeric quantity became NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("environment contract: {0}")]
    Env(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
