use thiserror::Error;

/// Crate-wide error type. Variants map one-to-one onto the failure modes of
/// the chain/spectral/bound machinery; `exit_code` gives the CLI convention
/// (1 = bad input, 2 = numerical failure).
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("negative transition probability at row {row}, column {col}")]
    NegativeEntry { row: usize, col: usize },
    #[error("row {row} sums to {sum:.17}, not 1")]
    RowSumViolation { row: usize, sum: f64 },
    #[error("stationary distribution is not unique (chain is reducible)")]
    NonUniqueStationary,
    #[error("stationary probability of state {state} is {value:.3e}, below the 1e-14 support floor")]
    DegenerateSupport { state: usize, value: f64 },
    #[error("declared bound {given} is smaller than max|f - pi(f)| = {required}")]
    BoundTooSmall { required: f64, given: f64 },
    #[error("symmetric eigensolver failed to converge within {sweeps} sweeps")]
    EigensolverFailure { sweeps: usize },
    #[error("no spectral gap (gap parameter = {lambda})")]
    NoGap { lambda: f64 },
    #[error("linear solve hit a degenerate pivot")]
    SingularSolve,
    #[error("chain is not reversible: detailed balance fails at ({row}, {col})")]
    NotReversible { row: usize, col: usize },
    #[error("t = {t} outside admissible range [0, {limit})")]
    OutOfRange { t: f64, limit: f64 },
    #[error("sigma^2 = 0: Bennett bound degenerates")]
    ZeroVariance,
    #[error("objective is not concave on the search interval; bad conjugand")]
    NonConcaveDetected,
    #[error("series order {order} exceeds the supported cap {cap}")]
    OrderTooHigh { order: usize, cap: usize },
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("lambda_plus = {0} is negative; this bound requires lambda_plus in [0, 1)")]
    NegativeLambdaPlus(f64),
    #[error("value {value} exceeds the declared bound {bound}")]
    OutOfBound { value: f64, bound: f64 },
    #[error("exact tail computation too large ({states} states, n = {n})")]
    TooLarge { states: usize, n: usize },
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("overflow in exact rational arithmetic")]
    RationalOverflow,
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// CLI exit code: 1 for input/validation problems, 2 for numerical
    /// failures. Bound violations (exit 3) are not errors; they are verdicts.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::EigensolverFailure { .. }
            | Error::NoGap { .. }
            | Error::SingularSolve
            | Error::TooLarge { .. }
            | Error::RationalOverflow => 2,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
