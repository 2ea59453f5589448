//! Error type shared across the crate.

use alloc::string::String;
use core::fmt;

/// Errors raised by the fusion pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two planes or tensors that must share a shape do not.
    ShapeMismatch { context: &'static str },
    /// An infrared/visible pair whose spatial dimensions disagree.
    Registration {
        ir_h: usize,
        ir_w: usize,
        vi_h: usize,
        vi_w: usize,
    },
    /// An input too small for the requested operation (pyramid levels,
    /// SSIM window, crop size, ...).
    TooSmall { context: &'static str },
    /// A value outside its documented range (pixel outside [0,1],
    /// step beyond total_steps, ...).
    OutOfRange { context: &'static str },
    /// A map that must contain only {0,1} does not.
    NonBinary { context: &'static str },
    /// NaN or infinity where finite values are required. Carries the name
    /// of the offending quantity (e.g. a parameter name).
    NonFinite { what: String },
    /// A configuration that violates its invariants.
    InvalidConfig { what: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { context } => write!(f, "shape mismatch: {context}"),
            Error::Registration {
                ir_h,
                ir_w,
                vi_h,
                vi_w,
            } => write!(
                f,
                "unregistered pair: ir is {ir_h}x{ir_w}, vi is {vi_h}x{vi_w}"
            ),
            Error::TooSmall { context } => write!(f, "input too small: {context}"),
            Error::OutOfRange { context } => write!(f, "out of range: {context}"),
            Error::NonBinary { context } => write!(f, "map is not binary: {context}"),
            Error::NonFinite { what } => write!(f, "non-finite value in {what}"),
            Error::InvalidConfig { what } => write!(f, "invalid config: {what}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
