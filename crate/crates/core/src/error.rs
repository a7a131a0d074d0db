use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("feasible set has no interior certificate")]
    MissingCertificate,

    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    #[error("problem is unbounded")]
    Unbounded,

    #[error("objective is not strongly convex and the set is unbounded")]
    NotStronglyConvex,

    #[error("block {0} subproblem has no unique minimizer")]
    NonStrictBlock(usize),

    #[error("subproblem {0} infeasible at the current allocation")]
    SubproblemInfeasible(usize),

    #[error("round {round} is beyond the end of a finite schedule of length {len}")]
    ScheduleExhausted { round: usize, len: usize },

    #[error("invalid coloring: blocks {0} and {1} are adjacent but share a color")]
    InvalidColoring(usize, usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("incompatible configuration: {0}")]
    Incompatible(String),

    #[error("mismatched problems: {0}")]
    MismatchedProblems(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn dim_err(what: &str, expected: usize, got: usize) -> Error {
    Error::Dimension(format!("{what}: expected {expected}, got {got}"))
}
