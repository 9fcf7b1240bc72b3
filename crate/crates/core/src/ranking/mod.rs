//! Mini-batch feature ranking: mutual information of every feature against
//! the binary label, plus a capped random sample of feature pairs.

pub mod bench;
mod mi;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{combine_buckets, mix64, MiniBatch, DEFAULT_BUCKET_COUNT};

pub use mi::{mutual_information_dense, mutual_information_sparse, SparseColumn, MAX_ARITY};

/// Seed for hashing bucket pairs into interaction values.
pub const INTERACTION_SEED: u64 = 0x1a7e_4ac7_0000_0001;
pub const DEFAULT_CONTINGENCY_WIDTH: u32 = 256;
pub const DEFAULT_INTERACTION_CAP: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RankingError {
    #[error("label column has {got} rows, feature column has {expected}")]
    Misaligned { expected: usize, got: usize },
    #[error("label {0} is not binary")]
    Label(u8),
    #[error("invalid column: {0}")]
    Column(String),
    #[error("unlabeled batch")]
    Unlabeled,
    #[error("interaction cap must be non-negative, got {0}")]
    NegativeCap(i64),
    #[error("contingency width must be in [2, {MAX_ARITY}], got {0}")]
    ContingencyWidth(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankingConfig {
    pub interaction_cap: usize,
    pub seed: u64,
    /// Range of the raw bucket ids held by the input columns.
    pub bucket_count: u32,
    /// Bucket ids are re-hashed into this many cells before counting.
    pub contingency_width: u32,
}

impl Default for RankingConfig {
    fn default() -> Self {
        RankingConfig {
            interaction_cap: DEFAULT_INTERACTION_CAP,
            seed: 0,
            bucket_count: DEFAULT_BUCKET_COUNT,
            contingency_width: DEFAULT_CONTINGENCY_WIDTH,
        }
    }
}

impl RankingConfig {
    /// Converts a signed cap as it appears in configuration.
    pub fn cap_from_i64(cap: i64) -> Result<usize, RankingError> {
        usize::try_from(cap).map_err(|_| RankingError::NegativeCap(cap))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankingResult {
    /// MI in bits, keyed by feature name.
    pub scores: BTreeMap<String, f64>,
    /// Keyed by `(a, b)` with `a < b`.
    pub interaction_scores: BTreeMap<(String, String), f64>,
    pub evaluated_pairs: usize,
}

/// Ranks every column against the batch labels. Columns hold raw bucket ids
/// (arity = `cfg.bucket_count`) indexed by record position. Unlabeled rows
/// are dropped before counting.
pub fn rank_batch<K: AsRef<str> + Ord>(
    batch: &MiniBatch,
    columns: &BTreeMap<K, SparseColumn>,
    cfg: &RankingConfig,
) -> Result<RankingResult, RankingError> {
    if !(2..=MAX_ARITY).contains(&cfg.contingency_width) {
        return Err(RankingError::ContingencyWidth(cfg.contingency_width));
    }
    let n = batch.len();
    for col in columns.values() {
        if col.len() != n {
            return Err(RankingError::Misaligned {
                expected: n,
                got: col.len(),
            });
        }
    }
    let labels: Vec<Option<u8>> = batch.records.iter().map(|r| r.label).collect();
    let labeled = labels.iter().filter(|l| l.is_some()).count();
    if labeled == 0 {
        return Err(RankingError::Unlabeled);
    }

    // Compact to labeled rows only when some rows lack a label.
    let remap: Option<Vec<u32>> = (labeled < n).then(|| {
        let mut next = 0u32;
        labels
            .iter()
            .map(|l| match l {
                Some(_) => {
                    next += 1;
                    next - 1
                }
                None => u32::MAX,
            })
            .collect()
    });
    let y: Vec<u8> = labels.iter().flatten().copied().collect();

    let names: Vec<&str> = columns.keys().map(|k| k.as_ref()).collect();
    let raw: Vec<SparseColumn> = columns
        .values()
        .map(|c| match &remap {
            None => c.clone(),
            Some(map) => compact(c, map, labeled),
        })
        .collect();

    let width = cfg.contingency_width;
    let mut result = RankingResult::default();
    for (name, col) in names.iter().zip(&raw) {
        let reduced = reduce_column(col.len(), col.indices(), col.values(), width);
        let score = mutual_information_sparse(&reduced, &y)?;
        result.scores.insert((*name).to_string(), score);
    }

    for (i, j) in sample_pairs(names.len(), cfg.interaction_cap, cfg.seed) {
        let pair = interaction_column(&raw[i], &raw[j], cfg.bucket_count, width);
        let score = mutual_information_sparse(&pair, &y)?;
        result
            .interaction_scores
            .insert((names[i].to_string(), names[j].to_string()), score);
        result.evaluated_pairs += 1;
    }
    Ok(result)
}

fn compact(col: &SparseColumn, map: &[u32], labeled: usize) -> SparseColumn {
    let (indices, values): (Vec<u32>, Vec<u32>) = col
        .indices()
        .iter()
        .zip(col.values())
        .filter_map(|(&i, &v)| {
            let to = map[i as usize];
            (to != u32::MAX).then_some((to, v))
        })
        .unzip();
    SparseColumn::from_parts_unchecked(labeled, indices, values, col.arity())
}

fn reduce_column(len: usize, indices: &[u32], values: &[u32], width: u32) -> SparseColumn {
    let reduced = values
        .iter()
        .map(|&v| (mix64(u64::from(v)) % u64::from(width)) as u32)
        .collect();
    SparseColumn::from_parts_unchecked(len, indices.to_vec(), reduced, width)
}

/// Rows where both columns are present, valued by the hash of the bucket pair.
fn interaction_column(a: &SparseColumn, b: &SparseColumn, bucket_count: u32, width: u32) -> SparseColumn {
    let (ai, av) = (a.indices(), a.values());
    let (bi, bv) = (b.indices(), b.values());
    let mut indices = Vec::new();
    let mut values = Vec::new();
    let (mut p, mut q) = (0, 0);
    while p < ai.len() && q < bi.len() {
        match ai[p].cmp(&bi[q]) {
            std::cmp::Ordering::Less => p += 1,
            std::cmp::Ordering::Greater => q += 1,
            std::cmp::Ordering::Equal => {
                let combined = combine_buckets(av[p], bv[q], bucket_count, INTERACTION_SEED);
                indices.push(ai[p]);
                values.push((mix64(u64::from(combined.bucket())) % u64::from(width)) as u32);
                p += 1;
                q += 1;
            }
        }
    }
    SparseColumn::from_parts_unchecked(a.len(), indices, values, width)
}

/// Draws `min(cap, C(f, 2))` distinct unordered pairs `(i, j)`, `i < j`,
/// uniformly without replacement. Returned in lexicographic order.
pub fn sample_pairs(features: usize, cap: usize, seed: u64) -> Vec<(usize, usize)> {
    let total = features * features.saturating_sub(1) / 2;
    if cap >= total {
        return (0..features)
            .flat_map(|i| (i + 1..features).map(move |j| (i, j)))
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, total, cap).into_vec();
    picked.sort_unstable();

    // walk the upper triangle row by row alongside the sorted linear ids
    let mut out = Vec::with_capacity(cap);
    let mut row = 0usize;
    let mut row_start = 0usize;
    for k in picked {
        while k >= row_start + (features - 1 - row) {
            row_start += features - 1 - row;
            row += 1;
        }
        out.push((row, row + 1 + (k - row_start)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeatureName, FeatureValue, Record};

    fn batch_with(n: usize, label: impl Fn(usize) -> Option<u8>) -> MiniBatch {
        let records = (0..n)
            .map(|i| Record::new(BTreeMap::<FeatureName, FeatureValue>::new(), label(i), 0).unwrap())
            .collect();
        MiniBatch::new(records, 0, 0, 1).unwrap()
    }

    fn column(n: usize, f: impl Fn(usize) -> Option<u32>) -> SparseColumn {
        let dense: Vec<Option<u32>> = (0..n).map(f).collect();
        SparseColumn::from_dense(&dense, DEFAULT_BUCKET_COUNT).unwrap()
    }

    fn columns(features: usize, n: usize) -> BTreeMap<String, SparseColumn> {
        (0..features)
            .map(|f| {
                (
                    format!("f{f:03}"),
                    column(n, |i| ((i + f) % 3 != 0).then_some(((i * 7 + f) % 5) as u32)),
                )
            })
            .collect()
    }

    #[test]
    fn pair_sampling_counts() {
        assert_eq!(sample_pairs(10, 1000, 1).len(), 45);
        assert_eq!(sample_pairs(100, 50, 1).len(), 50);
        assert_eq!(sample_pairs(1, 10, 1).len(), 0);
        assert_eq!(sample_pairs(0, 10, 1).len(), 0);
        let pairs = sample_pairs(30, 200, 9);
        let unique: std::collections::BTreeSet<_> = pairs.iter().collect();
        assert_eq!(unique.len(), 200);
        assert!(pairs.iter().all(|&(i, j)| i < j && j < 30));
    }

    #[test]
    fn sampled_pairs_decode_matches_enumeration() {
        let all = sample_pairs(12, usize::MAX, 0);
        // cap one below total forces the sampling path
        let sampled = sample_pairs(12, all.len() - 1, 3);
        assert!(sampled.iter().all(|p| all.contains(p)));
        assert_eq!(sampled.len(), all.len() - 1);
    }

    #[test]
    fn cap_not_binding_and_binding() {
        let b = batch_with(40, |i| Some((i % 2) as u8));
        let r = rank_batch(&b, &columns(10, 40), &RankingConfig { interaction_cap: 1000, ..Default::default() }).unwrap();
        assert_eq!(r.evaluated_pairs, 45);
        assert_eq!(r.scores.len(), 10);
        let r = rank_batch(&b, &columns(100, 40), &RankingConfig { interaction_cap: 50, ..Default::default() }).unwrap();
        assert_eq!(r.evaluated_pairs, 50);
        assert_eq!(r.interaction_scores.len(), 50);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let b = batch_with(60, |i| Some(((i / 2) % 2) as u8));
        let cols = columns(20, 60);
        let cfg = RankingConfig { interaction_cap: 17, seed: 5, ..Default::default() };
        assert_eq!(rank_batch(&b, &cols, &cfg).unwrap(), rank_batch(&b, &cols, &cfg).unwrap());
    }

    #[test]
    fn unlabeled_batch_rejected() {
        let b = batch_with(5, |_| None);
        assert_eq!(
            rank_batch(&b, &columns(2, 5), &RankingConfig::default()),
            Err(RankingError::Unlabeled)
        );
    }

    #[test]
    fn misaligned_column_rejected() {
        let b = batch_with(5, |_| Some(1));
        let mut cols = columns(2, 5);
        cols.insert("bad".into(), column(6, |_| Some(1)));
        assert!(matches!(
            rank_batch(&b, &cols, &RankingConfig::default()),
            Err(RankingError::Misaligned { .. })
        ));
    }

    #[test]
    fn negative_cap_rejected() {
        assert_eq!(RankingConfig::cap_from_i64(-1), Err(RankingError::NegativeCap(-1)));
        assert_eq!(RankingConfig::cap_from_i64(7), Ok(7));
    }

    #[test]
    fn unlabeled_rows_are_dropped() {
        // label-identical feature on labeled rows, noise on unlabeled ones
        let n = 200;
        let label = |i: usize| (i % 4 != 3).then_some(((i / 2) % 2) as u8);
        let b = batch_with(n, label);
        let mut cols = BTreeMap::new();
        cols.insert(
            "signal".to_string(),
            column(n, |i| Some(label(i).map(u32::from).unwrap_or((i % 7) as u32 + 10))),
        );
        let r = rank_batch(&b, &cols, &RankingConfig::default()).unwrap();
        let y: Vec<u8> = (0..n).filter_map(label).collect();
        let ones = y.iter().filter(|&&v| v == 1).count() as f64 / y.len() as f64;
        let h = -(ones * ones.log2() + (1.0 - ones) * (1.0 - ones).log2());
        assert!((r.scores["signal"] - h).abs() < 1e-12);
    }
}
