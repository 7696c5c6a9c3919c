use thiserror::Error;

/// Errors raised by the solvers, models and fitting engines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("no convergence after {iterations} iterations (best x = {best:?}, residual = {residual:e})")]
    NoConvergence {
        iterations: usize,
        best: Vec<f64>,
        residual: f64,
    },

    #[error("no sign change found: f({lo}) = {f_lo:e}, f({hi}) = {f_hi:e}")]
    NoBracket {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("singular Jacobian (det = {det:e}, threshold = {threshold:e})")]
    SingularJacobian { det: f64, threshold: f64 },

    #[error("non-finite value: {context}")]
    NonFinite { context: String },

    #[error("singular subset {combo:?} at k = {k}: {reason}")]
    Singular {
        combo: Vec<usize>,
        k: f64,
        reason: String,
    },

    #[error("insufficient data: {usable} usable points, at least {required} required")]
    InsufficientData { usable: usize, required: usize },

    #[error("every combination is singular at k = {k}")]
    AllSingular { k: f64 },

    #[error("no root of the reduced derivative in [{lo}, {hi}]")]
    NoRootInRange { lo: f64, hi: f64 },

    #[error("determinant guard failed on {} k interval(s) and no root was found", intervals.len())]
    DegenerateSegment { intervals: Vec<(f64, f64)> },

    #[error("path solution left the box at k = {k}: coordinate {coordinate} = {value}")]
    OutOfBox {
        k: f64,
        coordinate: usize,
        value: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable tag for diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NoConvergence { .. } => "no_convergence",
            Error::NoBracket { .. } => "no_bracket",
            Error::SingularJacobian { .. } => "singular_jacobian",
            Error::NonFinite { .. } => "non_finite",
            Error::Singular { .. } => "singular",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::AllSingular { .. } => "all_singular",
            Error::NoRootInRange { .. } => "no_root_in_range",
            Error::DegenerateSegment { .. } => "degenerate_segment",
            Error::OutOfBox { .. } => "out_of_box",
            Error::Domain(_) => "domain_error",
            Error::InvalidInput(_) => "invalid_input",
        }
    }
}
