use core::fmt;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A model shape or configuration that cannot be built.
    Config(&'static str),
    /// Lengths that should agree do not.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// An index that does not address the vector it is applied to.
    IndexOutOfRange { index: usize, len: usize },
    /// A caller-side precondition was violated.
    Contract(&'static str),
    /// A fitness evaluation returned NaN or an infinity.
    NonFiniteFitness { iteration: usize, value: f64 },
    /// A pattern frame outside `[0, 1]` or with too many active channels.
    InvalidFrame { frame: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected length {expected}, found {found}"),
            Error::IndexOutOfRange { index, len } => {
                write!(f, "index {index} out of range for length {len}")
            }
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::NonFiniteFitness { iteration, value } => {
                write!(f, "non-finite fitness {value} at iteration {iteration}")
            }
            Error::InvalidFrame { frame } => {
                write!(
                    f,
                    "frame {frame} violates the pattern range or sparsity limit"
                )
            }
        }
    }
}

impl core::error::Error for Error {}
