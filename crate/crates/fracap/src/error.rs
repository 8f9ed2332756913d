use thiserror::Error;

/// Every failure mode surfaced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter lies outside the range where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// The input set has zero measure (or rasterises to no cells).
    #[error("degenerate input: {0}")]
    Degenerate(String),
    /// The operation needs a rasterised representation of an overlapping union.
    #[error("needs rasterization: {0}")]
    NeedsRasterization(String),
    /// The set or function reaches the edge of the truncation box.
    #[error("truncation too small: {0}")]
    TruncationTooSmall(String),
    /// An iterative solver stopped before reaching its tolerance.
    #[error(
        "solver did not converge after {iterations} iterations (relative residual {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },
    /// The vertical grid of the extension solver cannot resolve the weight.
    #[error("z-grid too coarse: {0}")]
    ZGridTooCoarse(String),
    /// The stability constant was requested without the ball capacity.
    #[error("ball capacity required")]
    BallCapacityRequired,
    /// The requested configuration is outside what the library implements.
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// A shape or field document could not be read.
    #[error("malformed input: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
