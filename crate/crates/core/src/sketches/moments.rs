use serde::{Deserialize, Serialize};

use super::SketchError;

/// Welford running mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamingMoments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl StreamingMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, x: f64) -> Result<(), SketchError> {
        if !x.is_finite() {
            return Err(SketchError::NonFinite(x));
        }
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
        // rounding can push m2 a hair below zero on constant streams
        if self.m2 < 0.0 {
            self.m2 = 0.0;
        }
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn m2(&self) -> f64 {
        self.m2
    }

    /// Population variance (divides by `count`).
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }

    pub fn stddev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Parallel combination of two accumulators.
    pub fn merge(&self, other: &StreamingMoments) -> StreamingMoments {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        let nf = n as f64;
        let (na, nb) = (self.count as f64, other.count as f64);
        StreamingMoments {
            count: n,
            mean: self.mean + delta * nb / nf,
            m2: self.m2 + other.m2 + delta * delta * na * nb / nf,
        }
    }
}

pub fn moments_update(mut m: StreamingMoments, x: f64) -> Result<StreamingMoments, SketchError> {
    m.update(x)?;
    Ok(m)
}
