use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Joint indices are 1-based, matching the joint labels q1..q7.
    #[error("joint {joint} value {value} outside limits [{lower}, {upper}]")]
    LimitViolation {
        joint: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("singular transmission: zero diagonal entry for joint {joint}")]
    SingularTransmission { joint: usize },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("model file: {0}")]
    Model(String),

    #[error("protocol: {0}")]
    Protocol(String),

    #[error("controller connection lost: {0}")]
    ConnectionLost(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} contains non-finite values")))
    }
}
