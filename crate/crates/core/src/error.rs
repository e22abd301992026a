use thiserror::Error;

/// Errors raised while building designs, fitting, or running tests.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite value in {what} at row {row}")]
    NonFiniteInput { what: String, row: usize },
    #[error("cell {0} has no observations")]
    EmptyCell(String),
    #[error("at least two cells are required, found {0}")]
    InvalidGroupCount(usize),
    #[error("design matrix is rank deficient (rank {rank}, expected {expected})")]
    RankDeficient { rank: usize, expected: usize },
    #[error("observation {row} has leverage {leverage:.12} (>= 1 - 1e-8)")]
    LeverageOne { row: usize, leverage: f64 },
    #[error("cell {cell} has {df} residual degrees of freedom; at least 1 is required")]
    InsufficientReplication { cell: String, df: i64 },
    #[error("invalid contrast: {0}")]
    InvalidContrast(String),
    #[error("unknown factor '{0}'")]
    UnknownFactor(String),
    #[error("cells do not form a full factorial grid: missing {0}")]
    NotFullCross(String),
    #[error("contrast '{0}' has zero estimated variance")]
    DegenerateVariance(String),
    #[error("correlation matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),
    #[error("quantile search did not converge: {0}")]
    NoConvergence(String),
    #[error("all scaled residuals are zero; the wild bootstrap is undefined")]
    AllResidualsZero,
    #[error("{degenerate} of {total} bootstrap replicates had a zero variance estimate")]
    DegenerateBootstrap { degenerate: usize, total: usize },
    #[error("method {method} is not available for variance mode {mode}")]
    UnsupportedMethod { method: String, mode: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("data error: {0}")]
    Data(String),
}

impl Error {
    /// Process exit code for this error class: 2 configuration, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownFactor(_) | Error::UnsupportedMethod { .. } => 2,
            Error::InvalidInput(_)
            | Error::NonFiniteInput { .. }
            | Error::EmptyCell(_)
            | Error::InvalidGroupCount(_)
            | Error::InvalidContrast(_)
            | Error::NotFullCross(_)
            | Error::Io(_)
            | Error::Data(_) => 3,
            Error::RankDeficient { .. }
            | Error::LeverageOne { .. }
            | Error::InsufficientReplication { .. }
            | Error::DegenerateVariance(_)
            | Error::NotPositiveSemidefinite(_)
            | Error::NoConvergence(_)
            | Error::AllResidualsZero
            | Error::DegenerateBootstrap { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
