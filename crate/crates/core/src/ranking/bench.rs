//! Density-vs-runtime comparison of the sparse and dense MI paths.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{mutual_information_dense, mutual_information_sparse, RankingError, SparseColumn};

/// Value arity of the synthetic columns.
const BENCH_ARITY: u32 = 8;

pub const DEFAULT_DENSITIES: [f64; 5] = [0.01, 0.05, 0.1, 0.3, 0.5];

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub mean: Duration,
    pub min: Duration,
    pub median: Duration,
}

impl Timing {
    fn from_samples(mut samples: Vec<Duration>) -> Timing {
        samples.sort();
        let total: Duration = samples.iter().sum();
        let mid = samples.len() / 2;
        let median = if samples.len() % 2 == 1 {
            samples[mid]
        } else {
            (samples[mid - 1] + samples[mid]) / 2
        };
        Timing {
            mean: total / samples.len() as u32,
            min: samples[0],
            median,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub density: f64,
    pub present: usize,
    pub sparse: Timing,
    pub dense: Timing,
    /// Largest |sparse − dense| seen over the repeats.
    pub max_abs_diff: f64,
}

pub fn validate_densities(densities: &[f64]) -> Result<(), RankingError> {
    match densities.iter().find(|d| !(**d > 0.0 && **d <= 1.0)) {
        Some(d) => Err(RankingError::Column(format!("density {d} outside (0, 1]"))),
        None if densities.is_empty() => Err(RankingError::Column("no densities given".into())),
        None => Ok(()),
    }
}

/// Runs both MI paths `repeats` times per density on one synthetic column of
/// length `n`.
pub fn bench_mi(
    n: usize,
    densities: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchRow>, RankingError> {
    validate_densities(densities)?;
    if repeats == 0 {
        return Err(RankingError::Column("repeats must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2u8)).collect();
    let mut rows = Vec::with_capacity(densities.len());
    for &density in densities {
        let dense: Vec<Option<u32>> = (0..n)
            .map(|_| rng.gen_bool(density).then(|| rng.gen_range(0..BENCH_ARITY)))
            .collect();
        let sparse = SparseColumn::from_dense(&dense, BENCH_ARITY)?;
        let mut sparse_t = Vec::with_capacity(repeats);
        let mut dense_t = Vec::with_capacity(repeats);
        let mut max_abs_diff = 0.0f64;
        for _ in 0..repeats {
            let t = Instant::now();
            let a = std::hint::black_box(mutual_information_sparse(
                std::hint::black_box(&sparse),
                &y,
            )?);
            sparse_t.push(t.elapsed());
            let t = Instant::now();
            let b = std::hint::black_box(mutual_information_dense(
                std::hint::black_box(&dense),
                BENCH_ARITY,
                &y,
            )?);
            dense_t.push(t.elapsed());
            max_abs_diff = max_abs_diff.max((a - b).abs());
        }
        rows.push(BenchRow {
            density,
            present: sparse.present(),
            sparse: Timing::from_samples(sparse_t),
            dense: Timing::from_samples(dense_t),
            max_abs_diff,
        });
    }
    Ok(rows)
}

fn ms(d: Duration) -> String {
    format!("{:.4}", d.as_secs_f64() * 1e3)
}

/// Comma-separated table with a header row.
pub fn render_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(
        "density,present,sparse_mean_ms,sparse_min_ms,sparse_median_ms,dense_mean_ms,dense_min_ms,dense_median_ms,speedup_median,max_abs_diff\n",
    );
    for r in rows {
        let speedup = r.dense.median.as_secs_f64() / r.sparse.median.as_secs_f64().max(1e-12);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{:.2},{:e}\n",
            r.density,
            r.present,
            ms(r.sparse.mean),
            ms(r.sparse.min),
            ms(r.sparse.median),
            ms(r.dense.mean),
            ms(r.dense.min),
            ms(r.dense.median),
            speedup,
            r.max_abs_diff
        ));
    }
    out
}
