use std::time::Duration;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("infeasible schedule: {0}")]
    Infeasible(String),

    #[error("funnel is infeasible: cumulative upper bound {upper} < block size {total}")]
    InfeasibleFunnel { upper: usize, total: usize },

    #[error("dp table needs {required} bytes, budget is {available} bytes")]
    MemoryBudget { required: u64, available: u64 },

    #[error("time limit of {limit:?} exceeded after {elapsed:?}")]
    TimeLimit { limit: Duration, elapsed: Duration },

    #[error("{len} is not divisible by {by}")]
    Divisibility { len: usize, by: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True when the error means "did not converge" in benchmark terms.
    pub fn is_dnc(&self) -> bool {
        matches!(self, Error::MemoryBudget { .. } | Error::TimeLimit { .. })
    }
}
