use thiserror::Error;

/// Why no regularization strength equalizes a pair of samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipFailure {
    /// Both indices are the same sample.
    SameIndex,
    /// Reference log-probabilities are equal, so only the reward term differs.
    EqualReference,
    /// The equalizing coefficient would be zero or negative.
    NonPositive,
}

impl std::fmt::Display for FlipFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FlipFailure::SameIndex => write!(f, "indices are identical; a sample cannot flip against itself"),
            FlipFailure::EqualReference => {
                write!(f, "equal reference probabilities; only an infinite beta equalizes the pair")
            }
            FlipFailure::NonPositive => write!(f, "the equalizing beta is not positive"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("infinite divergence: mass at index {index} lies outside the support of the second argument")]
    InfiniteDivergence { index: usize },

    #[error("invalid coefficient: {0}")]
    InvalidCoefficient(String),

    #[error("root solver failed: {0}")]
    SolverFailure(String),

    #[error("ratio undefined: index {index} has zero reference mass")]
    UndefinedRatio { index: usize },

    #[error("no finite flip: {0}")]
    NoFiniteFlip(FlipFailure),

    #[error("invalid anchor: {0}")]
    InvalidAnchor(String),

    #[error("non-finite gradient at coordinate {index}")]
    NonFiniteGradient { index: usize },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
