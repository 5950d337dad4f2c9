use core::fmt;

use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Everything that can go wrong inside the core crate.
///
/// Variants are grouped so that callers can map them to coarse categories
/// (bad input data vs. numerical trouble) without string matching.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the function.
    Domain(String),
    /// A saturating transform whose bounds are out of order.
    InvalidTransform { e_min: f64, e_start: f64, e_max: f64 },
    /// Coefficients do not carry the fields the law form requires.
    InvalidCoefficients(String),
    /// The operation is not defined for this law form.
    UnsupportedForm(&'static str),
    /// α(E_start) vanished, so the effective parameter count is undefined.
    DegenerateCoefficients,
    /// The interaction coefficient is zero: routing never stops helping.
    NoCutoff,
    /// Bad observations (NaN, non-positive loss, length mismatch, ...).
    Data(String),
    /// Not enough or not varied enough data to fit the requested form.
    FitInfeasible(String),
    /// A shape or configuration that violates its invariants.
    InvalidShape(String),
    /// Parameters became non-finite during an iterative procedure.
    Divergence(String),
}

impl Error {
    /// True for errors caused by the numerical procedure rather than its input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::DegenerateCoefficients | Error::NoCutoff | Error::Divergence(_)
        )
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::InvalidTransform { e_min, e_start, e_max } => write!(
                f,
                "invalid saturating transform: need e_min <= e_start < e_max, got {e_min} / {e_start} / {e_max}"
            ),
            Error::InvalidCoefficients(msg) => write!(f, "invalid coefficients: {msg}"),
            Error::UnsupportedForm(op) => write!(f, "law form not supported by {op}"),
            Error::DegenerateCoefficients => {
                write!(f, "degenerate coefficients: alpha(E_start) = 0")
            }
            Error::NoCutoff => write!(f, "interaction coefficient c is zero: no cutoff exists"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::FitInfeasible(msg) => write!(f, "fit infeasible: {msg}"),
            Error::InvalidShape(msg) => write!(f, "invalid shape: {msg}"),
            Error::Divergence(msg) => write!(f, "divergence: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
