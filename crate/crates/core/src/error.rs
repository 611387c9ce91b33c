use thiserror::Error;

/// Errors raised by the relaylab library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A closed form or normalization has a vanishing denominator because
    /// the named variances are zero.
    #[error("degenerate estimation in {context}: zero {}", .vanished.join(", "))]
    DegenerateEstimation {
        context: String,
        vanished: Vec<&'static str>,
    },

    /// A linear solve failed or its residual exceeded tolerance.
    #[error("numerical error: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn degenerate(context: impl Into<String>, vanished: Vec<&'static str>) -> Self {
        Error::DegenerateEstimation {
            context: context.into(),
            vanished,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
