//! Metrics exposition: text-format rendering, the scrape endpoint, the
//! shared snapshot cell it reads from, and the alert log.

mod alert_log;
mod exposition;
mod server;

use std::sync::{Arc, RwLock};

use thiserror::Error;

pub use alert_log::AlertLog;
pub use exposition::{format_value, is_valid_metric_name, render_exposition, MetricKind, MetricSample};
pub use server::{MetricsServer, ServerHandle, CONTENT_TYPE, DEFAULT_PORT};

/// Stable metric family names.
pub mod families {
    pub const FEATURE_COVERAGE: &str = "drifter_feature_coverage";
    pub const FEATURE_CARDINALITY: &str = "drifter_feature_cardinality";
    pub const FEATURE_QUANTILE: &str = "drifter_feature_quantile";
    pub const FEATURE_STDDEV: &str = "drifter_feature_stddev";
    pub const FEATURE_MI_SCORE: &str = "drifter_feature_mi_score";
    pub const INTERACTIONS_EVALUATED: &str = "drifter_interactions_evaluated";
    pub const ALERTS_TOTAL: &str = "drifter_alerts_total";
    pub const RECORDS_PROCESSED_TOTAL: &str = "drifter_records_processed_total";
    pub const WINDOW_ID: &str = "drifter_window_id";
    pub const PARSE_REJECTED_TOTAL: &str = "drifter_parse_rejected_total";
    pub const UP: &str = "drifter_up";
    pub const FEATURES_TRACKED: &str = "drifter_features_tracked";
    pub const DIAGNOSTICS_TOTAL: &str = "drifter_diagnostics_total";
    pub const WINDOW_PROCESSING_MILLISECONDS: &str = "drifter_window_processing_milliseconds";
    pub const RECORDS_PER_SECOND: &str = "drifter_records_per_second";
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExportError {
    #[error("invalid metric name {0:?}")]
    MetricName(String),
    #[error("invalid label name {0:?}")]
    LabelName(String),
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
}

/// The latest published sample set. Readers take a reference to a whole
/// set; publication swaps the reference, so a scrape never mixes windows.
#[derive(Debug, Default)]
pub struct SnapshotCell {
    current: RwLock<Arc<Vec<MetricSample>>>,
}

impl SnapshotCell {
    pub fn new(initial: Vec<MetricSample>) -> Self {
        SnapshotCell {
            current: RwLock::new(Arc::new(initial)),
        }
    }

    pub fn publish(&self, samples: Vec<MetricSample>) {
        let next = Arc::new(samples);
        let mut guard = self.current.write().unwrap_or_else(|p| p.into_inner());
        *guard = next;
    }

    pub fn load(&self) -> Arc<Vec<MetricSample>> {
        self.current
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .clone()
    }
}
