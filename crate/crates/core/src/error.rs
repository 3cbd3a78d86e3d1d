use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid offspring law: {0}")]
    InvalidLaw(String),

    #[error("offspring law is not supercritical (mean {mean})")]
    Subcritical { mean: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("query at radius {needed} is not covered by the sampled window of radius {window}")]
    Window { needed: f64, window: f64 },

    #[error("particle cap of {cap} reached")]
    Capacity { cap: usize },

    #[error("no convergence: {0}")]
    Convergence(String),

    #[error("{truncated} of {total} replicates hit the particle cap")]
    Truncation { truncated: usize, total: usize },

    #[error("no replicate satisfied the conditioning event ({total} simulated)")]
    Acceptance { total: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
