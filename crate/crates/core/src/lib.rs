//! Streaming feature monitoring for sparse record streams.
//!
//! Records are grouped into mini-batches; every window each feature gets a
//! fresh profile (coverage, distinct-count sketch, histogram, moments), the
//! features are ranked by mutual information against the binary label, the
//! derived metrics are appended to bounded time series and checked against
//! sliding-window drift rules, and the result is published as an immutable
//! snapshot for the metrics endpoint.

pub mod drift;
pub mod engine;
pub mod export;
pub mod ingest;
pub mod model;
pub mod ranking;
pub mod sketches;
