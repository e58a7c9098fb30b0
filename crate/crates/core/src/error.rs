use alloc::string::String;
use core::fmt;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands have incompatible shapes.
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    /// A value that must be finite was NaN or infinite.
    NonFinite(String),
    /// An argument violated an operation's precondition.
    InvalidArgument(String),
    /// A statistic is undefined for the given input (zero variance, too few points).
    Undefined(String),
    /// Misuse of a gradient tape.
    Tape(String),
    /// A parameter name was not found in the store.
    UnknownParam(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn undefined(msg: impl Into<String>) -> Self {
        Error::Undefined(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, left, right } => write!(
                f,
                "{op}: dimension mismatch between {}x{} and {}x{}",
                left.0, left.1, right.0, right.1
            ),
            Error::NonFinite(ctx) => write!(f, "non-finite value: {ctx}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Undefined(msg) => write!(f, "undefined: {msg}"),
            Error::Tape(msg) => write!(f, "tape: {msg}"),
            Error::UnknownParam(name) => write!(f, "unknown parameter `{name}`"),
        }
    }
}

impl core::error::Error for Error {}
