use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("invalid simplex vector: {0}")]
    Simplex(String),

    #[error("invalid game: {0}")]
    InvalidGame(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("no start reached feasibility (best residual {best_residual:e})")]
    Infeasible { best_residual: f64 },

    #[error("iteration budget exhausted at every start")]
    NonConverged,

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("no candidate: every subproblem was infeasible")]
    NoCandidate,

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension { expected, actual })
    }
}
