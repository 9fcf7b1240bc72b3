use crate::model::FeatureValue;

use super::{HllSketch, SketchError, StreamingHistogram, StreamingMoments};

/// Per-feature state for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureProfile {
    present_count: u64,
    window_total: u64,
    hll: HllSketch,
    histogram: StreamingHistogram,
    moments: StreamingMoments,
    relevance: Option<f64>,
}

impl FeatureProfile {
    pub fn new(hll_precision: u8, max_bins: usize) -> Result<Self, SketchError> {
        Ok(FeatureProfile {
            present_count: 0,
            window_total: 0,
            hll: HllSketch::new(hll_precision)?,
            histogram: StreamingHistogram::new(max_bins)?,
            moments: StreamingMoments::new(),
            relevance: None,
        })
    }

    /// Accounts for one record. `value_hash` is the stable 64-bit hash of the
    /// value; the caller computes it once and reuses it for ranking.
    pub fn observe(
        &mut self,
        value: Option<(&FeatureValue, u64)>,
    ) -> Result<(), SketchError> {
        match value {
            None | Some((FeatureValue::Missing, _)) => {
                self.window_total += 1;
                Ok(())
            }
            Some((v, hash)) => {
                if let FeatureValue::Numeric(x) = v {
                    // validate before touching any counter
                    if !x.is_finite() {
                        return Err(SketchError::NonFinite(*x));
                    }
                    self.histogram.update(*x)?;
                    self.moments.update(*x)?;
                }
                self.window_total += 1;
                self.present_count += 1;
                self.hll.insert_hash(hash);
                Ok(())
            }
        }
    }

    /// Bulk form of `observe(None)` for records that lack the feature.
    pub fn observe_missing(&mut self, records: u64) {
        self.window_total += records;
    }

    pub fn present_count(&self) -> u64 {
        self.present_count
    }

    pub fn window_total(&self) -> u64 {
        self.window_total
    }

    pub fn coverage(&self) -> f64 {
        if self.window_total == 0 {
            0.0
        } else {
            self.present_count as f64 / self.window_total as f64
        }
    }

    pub fn cardinality(&self) -> f64 {
        self.hll.estimate()
    }

    pub fn hll(&self) -> &HllSketch {
        &self.hll
    }

    pub fn histogram(&self) -> &StreamingHistogram {
        &self.histogram
    }

    pub fn moments(&self) -> &StreamingMoments {
        &self.moments
    }

    pub fn relevance(&self) -> Option<f64> {
        self.relevance
    }

    pub fn set_relevance(&mut self, score: f64) {
        self.relevance = Some(score);
    }

    pub fn has_numeric(&self) -> bool {
        self.moments.count() > 0
    }
}

/// Functional form of [`FeatureProfile::observe`]; hashes the value itself.
pub fn profile_update(
    mut p: FeatureProfile,
    name: &str,
    value: Option<&FeatureValue>,
) -> Result<FeatureProfile, SketchError> {
    match value {
        None | Some(FeatureValue::Missing) => p.observe(None)?,
        Some(v) => {
            let h = crate::model::stable_hash64(name, v, 0).map_err(SketchError::Model)?;
            p.observe(Some((v, h)))?;
        }
    }
    Ok(p)
}
