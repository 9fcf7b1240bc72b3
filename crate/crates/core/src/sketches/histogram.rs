use super::SketchError;

pub const DEFAULT_MAX_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub centroid: f64,
    pub count: u64,
}

/// Bounded-memory streaming histogram. Each new value becomes its own bin;
/// when the bin budget is exceeded the two closest centroids collapse into
/// their count-weighted mean.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamingHistogram {
    max_bins: usize,
    bins: Vec<Bin>,
    total: u64,
}

impl StreamingHistogram {
    pub fn new(max_bins: usize) -> Result<Self, SketchError> {
        if max_bins == 0 {
            return Err(SketchError::MaxBins);
        }
        Ok(StreamingHistogram {
            max_bins,
            bins: Vec::with_capacity(max_bins + 1),
            total: 0,
        })
    }

    pub fn max_bins(&self) -> usize {
        self.max_bins
    }

    pub fn bins(&self) -> &[Bin] {
        &self.bins
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn clear(&mut self) {
        self.bins.clear();
        self.total = 0;
    }

    pub fn update(&mut self, x: f64) -> Result<(), SketchError> {
        if !x.is_finite() {
            return Err(SketchError::NonFinite(x));
        }
        self.insert_bin(Bin { centroid: x, count: 1 });
        self.total += 1;
        self.shrink();
        Ok(())
    }

    fn insert_bin(&mut self, bin: Bin) {
        match self
            .bins
            .binary_search_by(|b| b.centroid.total_cmp(&bin.centroid))
        {
            Ok(i) => self.bins[i].count += bin.count,
            Err(i) => self.bins.insert(i, bin),
        }
    }

    fn shrink(&mut self) {
        while self.bins.len() > self.max_bins {
            let i = self
                .bins
                .windows(2)
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    (a[1].centroid - a[0].centroid).total_cmp(&(b[1].centroid - b[0].centroid))
                })
                .map(|(i, _)| i)
                .expect("at least two bins when over budget");
            let (left, right) = (self.bins[i], self.bins[i + 1]);
            let count = left.count + right.count;
            let w = right.count as f64 / count as f64;
            let centroid = (left.centroid + (right.centroid - left.centroid) * w)
                .clamp(left.centroid, right.centroid);
            self.bins[i] = Bin { centroid, count };
            self.bins.remove(i + 1);
        }
    }

    /// Folds another histogram into this one, keeping this one's budget.
    pub fn merge_from(&mut self, other: &StreamingHistogram) {
        for &b in &other.bins {
            self.insert_bin(b);
        }
        self.total += other.total;
        self.shrink();
    }

    /// Each centroid sits at the midpoint of its mass on the cumulative
    /// axis; quantiles interpolate linearly between neighbours and clamp to
    /// the extreme centroids.
    pub fn quantile(&self, q: f64) -> Result<f64, SketchError> {
        if !(0.0..=1.0).contains(&q) {
            return Err(SketchError::Quantile(q));
        }
        let first = self.bins.first().ok_or(SketchError::EmptyHistogram)?;
        let target = q * self.total as f64;
        let mut before = 0.0f64;
        let mut prev: Option<(f64, f64)> = None;
        for b in &self.bins {
            let pos = before + b.count as f64 / 2.0;
            if target <= pos {
                return Ok(match prev {
                    None => first.centroid,
                    Some((prev_pos, prev_c)) => {
                        let t = (target - prev_pos) / (pos - prev_pos);
                        prev_c + t * (b.centroid - prev_c)
                    }
                });
            }
            prev = Some((pos, b.centroid));
            before += b.count as f64;
        }
        Ok(self.bins[self.bins.len() - 1].centroid)
    }
}

pub fn histogram_update(
    mut h: StreamingHistogram,
    x: f64,
) -> Result<StreamingHistogram, SketchError> {
    h.update(x)?;
    Ok(h)
}

pub fn histogram_quantile(h: &StreamingHistogram, q: f64) -> Result<f64, SketchError> {
    h.quantile(q)
}
