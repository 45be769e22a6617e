use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A scalar argument is outside the domain of the operation.
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// An instance or routing vector violates a structural invariant.
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    /// A utility or solver configuration cannot be used.
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
