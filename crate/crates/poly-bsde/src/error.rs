//! Crate-wide error type and result alias.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the solvers, evaluators, pricers, and CLI plumbing.
///
/// Every failure mode is reported, never masked: a diverging backward solve,
/// a singular least-squares system, or a price outside its static bounds all
/// carry enough context to point at the offending input.
#[derive(Debug, Error)]
pub enum Error {
    /// Parameters or configuration were rejected before any computation ran.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A backward integration produced a non-finite value or exceeded the
    /// magnitude cap. `component` is the index of the offending state entry
    /// in the integrated system; `label` names it in the caller's terms
    /// (for coefficient solves, the `(n, i, k)` table position).
    #[error("backward solve diverged at t = {time:.6} in {label}")]
    DivergedSolve {
        /// Time at which the divergence was detected.
        time: f64,
        /// Index of the offending component in the integrated state vector.
        component: usize,
        /// Human-readable name of the offending component.
        label: String,
    },

    /// A truncation order above the table's maximum was requested.
    #[error("truncation order {requested} exceeds the table maximum {available}")]
    OutOfRangeOrder {
        /// Order that was asked for.
        requested: usize,
        /// Largest order held by the table.
        available: usize,
    },

    /// A time lookup fell outside the grid span.
    #[error("time {t} outside the grid [{t_start}, {t_end}]")]
    OutOfGridTime {
        /// Requested time.
        t: f64,
        /// Grid start.
        t_start: f64,
        /// Grid end.
        t_end: f64,
    },

    /// An argument fell outside a transform's domain of definition.
    #[error("domain error: {0}")]
    Domain(String),

    /// The least-squares normal equations were numerically singular.
    #[error("rank-deficient least-squares system: {0}")]
    RankDeficient(String),

    /// A cumulant vector is unusable for density or price construction.
    #[error("invalid cumulants: {0}")]
    InvalidCumulants(String),

    /// Adaptive quadrature failed to reach the requested tolerance.
    #[error("quadrature did not converge: {0}")]
    QuadratureNotConverged(String),

    /// An option price lay outside its static no-arbitrage bounds.
    #[error("price outside no-arbitrage bounds: {0}")]
    OutOfBounds(String),

    /// A path set and a coefficient table were built on different grids.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Statistics were requested over an empty sample.
    #[error("empty sample")]
    EmptySample,

    /// A configuration file could not be parsed or is internally inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// An underlying I/O operation failed.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
