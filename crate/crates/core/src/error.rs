use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A model parameter violates its domain.
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },

    /// A function argument lies outside the domain of the function.
    #[error("{what} = {value} is outside the domain {domain}")]
    OutOfDomain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("state space of size {m} exceeds the cap of {cap}")]
    TooLarge { m: usize, cap: usize },

    #[error("start state {start} is outside 0..={m}")]
    StartOutOfRange { start: usize, m: usize },

    /// The finite-ratio regime admits no threshold: `alpha <= ln(kappa)/ln(sigma)`.
    #[error("no error threshold: alpha = {alpha} does not exceed ln(kappa)/ln(sigma) = {critical}")]
    NoThreshold { alpha: f64, critical: f64 },

    #[error("empty summation window [{lo}, {hi}]")]
    EmptyWindow { lo: i64, hi: i64 },

    #[error("need at least 2 uncensored samples, got {uncensored}")]
    InsufficientSamples { uncensored: usize },
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            field,
            reason: reason.into(),
        }
    }
}
