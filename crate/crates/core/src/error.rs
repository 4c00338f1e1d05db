use thiserror::Error;

/// Errors raised by the accountants, bounds, oracle and simulator.
///
/// The variants map one-to-one onto the CLI exit statuses (see
/// [`Error::exit_code`]).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {what} (required: {required})")]
    PreconditionViolated { what: String, required: String },

    #[error("degenerate budget: composed delta {delta} is not below 1")]
    DegenerateBudget { delta: f64 },

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("run diverged: {0}")]
    Diverged(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn precondition(what: impl Into<String>, required: impl ToString) -> Self {
        Error::PreconditionViolated {
            what: what.into(),
            required: required.to_string(),
        }
    }

    /// Process exit status for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::ResourceLimit(_) => 2,
            Error::PreconditionViolated { .. } | Error::Diverged(_) => 3,
            Error::DegenerateBudget { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
