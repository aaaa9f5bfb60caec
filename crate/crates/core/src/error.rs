use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("self-loop rejected on agent {0}")]
    SelfLoopRejected(usize),
    #[error("capital undefined for agent with zero consumption links")]
    UndefinedCapital,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("insufficient tail: need at least {needed} samples above cutoff, got {got}")]
    InsufficientTail { needed: usize, got: usize },
    #[error("no component with at least {needed} agents (largest has {largest})")]
    DisconnectedInput { needed: usize, largest: usize },
    #[error("no solution: {0}")]
    NoSolution(String),
    #[error("nonpositive price {value} at index {index}")]
    NonpositivePrice { index: usize, value: f64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
