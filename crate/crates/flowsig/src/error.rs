//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by flowsig operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Vector or matrix dimensions do not agree.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A covariance could not be inverted even after rank reduction.
    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    /// Rank reduction removed every direction.
    #[error("zero rank: all singular values fall below the cutoff {cutoff}")]
    ZeroRank { cutoff: f64 },

    /// No path exists between the requested endpoints.
    #[error("no path from node {origin} to node {destination}")]
    Disconnected { origin: usize, destination: usize },

    /// Route index not valid for the given OD pair.
    #[error("route {route} does not belong to OD pair {pair}")]
    UnknownRoute { route: usize, pair: usize },

    /// Iterative solver did not reach the requested tolerance.
    #[error("no convergence after {iterations} iterations (best residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// The MVN CDF error estimate still exceeds the tolerance at the
    /// maximum sample budget.
    #[error("cdf tolerance unreachable: estimated error {error:.3e} > {tolerance:.3e} at {points} points")]
    ToleranceUnreachable {
        error: f64,
        tolerance: f64,
        points: usize,
    },

    /// Scale search exhausted its bracket without finding a stable signal.
    #[error("no stable signal scale found up to {max_scale}")]
    NoStableScale { max_scale: f64 },

    /// Parameters outside their documented domain.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// Scalar argument outside its documented range.
    #[error("out of range: {0}")]
    OutOfRange(String),

    /// Trajectory too short for the requested classification window.
    #[error("trajectory of length {len} is shorter than the window {window}")]
    TooShort { len: usize, window: usize },

    /// Requested network cannot be generated with the given counts.
    #[error("infeasible topology: {0}")]
    InfeasibleTopology(String),

    /// Game or belief file failed validation.
    #[error("invalid definition: {0}")]
    InvalidDefinition(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Structured-text parse failure (includes line/column from the parser).
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
