use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An action outside the feasible set was handed to the simulator.
    #[error("infeasible action: {0}")]
    Infeasible(String),

    #[error("inconsistent state: {0}")]
    Inconsistent(String),

    #[error("metadata mismatch: {0}")]
    MetadataMismatch(String),

    #[error("state cap exceeded: about {estimate} states, cap is {cap}")]
    StateCapExceeded { estimate: u128, cap: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
