//! Streaming per-feature statistics: distinct counts, coverage, histogram
//! quantiles and running moments.

mod histogram;
mod hll;
mod moments;
mod profile;

use thiserror::Error;

pub use histogram::{
    histogram_quantile, histogram_update, Bin, StreamingHistogram, DEFAULT_MAX_BINS,
};
pub use hll::{hll_merge, HllSketch, DEFAULT_PRECISION, MAX_PRECISION, MIN_PRECISION};
pub use moments::{moments_update, StreamingMoments};
pub use profile::{profile_update, FeatureProfile};

/// Quantiles published when none are configured.
pub const DEFAULT_QUANTILES: [f64; 5] = [0.25, 0.5, 0.75, 0.95, 0.99];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SketchError {
    #[error("hll precision must be in [4, 16], got {0}")]
    Precision(u8),
    #[error("cannot merge sketches of precision {0} and {1}")]
    PrecisionMismatch(u8, u8),
    #[error("value {0} is not finite")]
    NonFinite(f64),
    #[error("histogram needs at least one bin")]
    MaxBins,
    #[error("quantile of an empty histogram")]
    EmptyHistogram,
    #[error("quantile {0} outside [0, 1]")]
    Quantile(f64),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}
