use alloc::string::String;
use core::fmt;

/// Errors raised by the core crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A rotation logarithm was requested too close to an angle of pi.
    CutLocus { trace: f64 },
    /// Robot and obstacle centers coincide, so the barrier is undefined.
    CoincidentPoints,
    /// A factor references a variable that was never declared.
    UnknownKey { key: String },
    /// A variable has the wrong kind or dimension for the factor reading it.
    VariableMismatch { factor: String, key: String },
    /// The noise model dimension does not match the residual dimension.
    NoiseDimension { factor: String, residual: usize, noise: usize },
    /// A residual or Jacobian entry was NaN or infinite.
    NonFinite { factor: String, iteration: usize },
    /// The normal equations could not be factorized.
    NotPositiveDefinite { pivot: usize },
    /// The reference does not cover the requested horizon index.
    ReferenceGap { needed: usize, available: usize },
    /// A parameter violates its documented invariant.
    InvalidParameter { name: &'static str, reason: &'static str },
    /// An aggregate was requested over an empty collection.
    Empty(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::CutLocus { trace } => {
                write!(f, "log near cut locus: rotation trace {trace} is within tolerance of -1")
            }
            Error::CoincidentPoints => write!(f, "robot position coincides with obstacle center"),
            Error::UnknownKey { key } => write!(f, "factor references undeclared variable {key}"),
            Error::VariableMismatch { factor, key } => {
                write!(f, "factor {factor}: variable {key} has the wrong kind or dimension")
            }
            Error::NoiseDimension { factor, residual, noise } => {
                write!(f, "factor {factor}: residual dimension {residual} does not match noise dimension {noise}")
            }
            Error::NonFinite { factor, iteration } => {
                write!(f, "non-finite residual or Jacobian in factor {factor} at iteration {iteration}")
            }
            Error::NotPositiveDefinite { pivot } => {
                write!(f, "normal equations not positive definite at pivot {pivot}")
            }
            Error::ReferenceGap { needed, available } => write!(f, "reference covers {available} states but the horizon needs {needed}"),
            Error::InvalidParameter { name, reason } => write!(f, "invalid {name}: {reason}"),
            Error::Empty(what) => write!(f, "{what} is empty"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
