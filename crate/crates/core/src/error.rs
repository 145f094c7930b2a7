use thiserror::Error;

#[derive(Debug, Error)]
pub enum CboError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("kernel matrix not positive definite after jitter escalation to {jitter:e}")]
    Factorization { jitter: f64 },

    #[error("no feasible incumbent available")]
    MissingIncumbent,

    #[error("initialization of `{problem}` found no feasible point after {attempts} designs")]
    Initialization { problem: String, attempts: usize },

    #[error("oracle for `{0}` found no feasible grid cell")]
    NoFeasibleCell(String),

    #[error("problem `{0}` has no known constrained optimum")]
    MissingOptimum(String),

    #[error("unknown {kind} `{name}`; registered: {registered}")]
    Unknown {
        kind: &'static str,
        name: String,
        registered: String,
    },

    #[error("{0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CboError>;
