//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by geometric estimation, pool management, and metrics.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// The point support is degenerate for the requested estimation
    /// (too few points, collinear rays, or coplanar geometry).
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// Iterative refinement ran out of iterations without reducing the
    /// residual.
    #[error("estimation did not converge: {0}")]
    NonConvergence(String),

    /// Token or grid dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A memory insert carried a timestamp older than stored entries.
    #[error("out-of-order timestamp: inserting {inserted} after {newest}")]
    OutOfOrderTimestamp { inserted: u64, newest: u64 },

    /// A frame sequence is too short for pairwise flow.
    #[error("sequence too short: got {0} frames, need at least 2")]
    SequenceTooShort(usize),

    /// A masked reduction found no contributing pixels.
    #[error("empty mask: {0}")]
    EmptyMask(String),

    /// A point-cloud metric was invoked on an empty cloud.
    #[error("empty point cloud: {0}")]
    EmptyCloud(String),

    /// Depth metrics require strictly positive depths.
    #[error("non-positive depth at pixel ({u}, {v})")]
    NonPositiveDepth { u: usize, v: usize },

    /// Image dimensions violate an operation's requirements.
    #[error("bad dimensions: {0}")]
    BadDimensions(String),
}

pub type Result<T> = std::result::Result<T, Error>;
