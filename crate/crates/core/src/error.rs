use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A textual identifier did not follow its grammar.
    Parse { input: String, token: String },
    /// An integer index fell outside its valid range.
    OutOfRange {
        what: &'static str,
        value: u64,
        limit: u64,
    },
    /// A coordinate fell outside the domain of a projection.
    Domain { what: &'static str, value: f64 },
    /// Grid dimensions are incompatible with the requested operation.
    Shape(String),
    /// Any other invalid argument.
    Argument(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Parse { input, token } => {
                write!(f, "cannot parse {input:?}: bad token {token:?}")
            }
            Error::OutOfRange { what, value, limit } => {
                write!(f, "{what} {value} out of range (must be < {limit})")
            }
            Error::Domain { what, value } => write!(f, "{what} {value} outside valid domain"),
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Argument(msg) => write!(f, "invalid argument: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
