//! Core domain types shared by every module, plus the hashing trick that maps
//! arbitrary feature values into a fixed integer range.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default number of buckets for the hashing trick (2^20).
pub const DEFAULT_BUCKET_COUNT: u32 = 1 << 20;

/// Separator byte placed between the feature name and its rendered value.
const NAME_VALUE_SEPARATOR: u8 = 0x1F;

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("feature name is empty or whitespace-only (at byte {offset})")]
    EmptyName { offset: usize },
    #[error("feature name {name:?} contains whitespace at byte {offset}")]
    WhitespaceInName { name: String, offset: usize },
    #[error("bucket count must be at least 2, got {0}")]
    BucketCount(u32),
    #[error("cannot hash a missing value")]
    MissingValue,
    #[error("numeric value {0} is not finite")]
    NonFinite(f64),
    #[error("label must be 0 or 1, got {0}")]
    Label(u8),
    #[error("record timestamp {ts} outside window [{start}, {end})")]
    OutsideWindow { ts: i64, start: i64, end: i64 },
    #[error("mini-batch has no records")]
    EmptyBatch,
}

/// A validated feature name: non-empty, no whitespace. Namespaced names
/// (`ns^feat`) are kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FeatureName(String);

impl FeatureName {
    pub fn new(raw: &str) -> Result<Self, ModelError> {
        parse_feature_name(raw)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for FeatureName {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        parse_feature_name(&value)
    }
}

impl From<FeatureName> for String {
    fn from(name: FeatureName) -> Self {
        name.0
    }
}

impl fmt::Display for FeatureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::borrow::Borrow<str> for FeatureName {
    fn borrow(&self) -> &str {
        &self.0
    }
}

/// Trims surrounding whitespace and validates the remaining name.
pub fn parse_feature_name(raw: &str) -> Result<FeatureName, ModelError> {
    let leading = raw.len() - raw.trim_start().len();
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(ModelError::EmptyName { offset: raw.len() });
    }
    if let Some((pos, _)) = trimmed.char_indices().find(|(_, c)| c.is_whitespace()) {
        return Err(ModelError::WhitespaceInName {
            name: trimmed.to_string(),
            offset: leading + pos,
        });
    }
    Ok(FeatureName(trimmed.to_string()))
}

/// The value a feature takes in one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureValue {
    Categorical(String),
    Numeric(f64),
    /// Only meaningful as an argument; a record encodes missingness by
    /// omitting the key.
    Missing,
}

impl FeatureValue {
    /// Builds a numeric value, rejecting NaN and infinities.
    pub fn numeric(x: f64) -> Result<Self, ModelError> {
        if x.is_finite() {
            Ok(FeatureValue::Numeric(x))
        } else {
            Err(ModelError::NonFinite(x))
        }
    }

    pub fn as_numeric(&self) -> Option<f64> {
        match self {
            FeatureValue::Numeric(x) => Some(*x),
            _ => None,
        }
    }

    /// Appends the canonical byte rendering used for hashing. Numbers use the
    /// shortest round-trip decimal, so `1.0` renders as `1`.
    fn render_into(&self, buf: &mut Vec<u8>) {
        match self {
            FeatureValue::Categorical(s) => buf.extend_from_slice(s.as_bytes()),
            FeatureValue::Numeric(x) => {
                use std::io::Write;
                let x = if *x == 0.0 { 0.0 } else { *x };
                let _ = write!(buf, "{x}");
            }
            FeatureValue::Missing => {}
        }
    }
}

/// One sparse observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub features: BTreeMap<FeatureName, FeatureValue>,
    pub label: Option<u8>,
    pub timestamp: i64,
}

impl Record {
    /// Validates the label domain and drops any `Missing` entries from the
    /// feature map.
    pub fn new(
        mut features: BTreeMap<FeatureName, FeatureValue>,
        label: Option<u8>,
        timestamp: i64,
    ) -> Result<Self, ModelError> {
        if let Some(l) = label {
            if l > 1 {
                return Err(ModelError::Label(l));
            }
        }
        for value in features.values() {
            if let FeatureValue::Numeric(x) = value {
                if !x.is_finite() {
                    return Err(ModelError::NonFinite(*x));
                }
            }
        }
        features.retain(|_, v| !matches!(v, FeatureValue::Missing));
        Ok(Record {
            features,
            label,
            timestamp,
        })
    }
}

/// The unit of windowed processing.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub records: Vec<Record>,
    pub window_id: u64,
    pub window_start: i64,
    pub window_end: i64,
}

impl MiniBatch {
    pub fn new(
        records: Vec<Record>,
        window_id: u64,
        window_start: i64,
        window_end: i64,
    ) -> Result<Self, ModelError> {
        if records.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        if let Some(r) = records
            .iter()
            .find(|r| r.timestamp < window_start || r.timestamp >= window_end)
        {
            return Err(ModelError::OutsideWindow {
                ts: r.timestamp,
                start: window_start,
                end: window_end,
            });
        }
        Ok(MiniBatch {
            records,
            window_id,
            window_start,
            window_end,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// A bucket id in `[0, bucket_count)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HashedValue(u32);

impl HashedValue {
    pub fn bucket(self) -> u32 {
        self.0
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET_BASIS ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Avalanche finalizer (MurmurHash3 fmix64). FNV-1a alone leaves the low
/// bits weakly mixed, which matters when reducing modulo a bucket count.
pub fn mix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    h
}

/// Stable 64-bit hash of `name 0x1F rendered-value`.
pub fn stable_hash64(name: &str, value: &FeatureValue, seed: u64) -> Result<u64, ModelError> {
    if matches!(value, FeatureValue::Missing) {
        return Err(ModelError::MissingValue);
    }
    let mut buf = Vec::with_capacity(name.len() + 24);
    buf.extend_from_slice(name.as_bytes());
    buf.push(NAME_VALUE_SEPARATOR);
    value.render_into(&mut buf);
    Ok(mix64(fnv1a64(seed, &buf)))
}

/// The hashing trick: clip any value to a bucket in `[0, bucket_count)`.
pub fn hash_feature(
    name: &FeatureName,
    value: &FeatureValue,
    bucket_count: u32,
    seed: u64,
) -> Result<HashedValue, ModelError> {
    if bucket_count < 2 {
        return Err(ModelError::BucketCount(bucket_count));
    }
    let h = stable_hash64(name.as_str(), value, seed)?;
    Ok(reduce(h, bucket_count))
}

/// Reduces an already-mixed 64-bit hash into `[0, bucket_count)`.
pub fn reduce(hash: u64, bucket_count: u32) -> HashedValue {
    HashedValue((hash % u64::from(bucket_count)) as u32)
}

/// Hashes the concatenation of two bucket ids; used for interaction columns.
pub fn combine_buckets(a: u32, b: u32, bucket_count: u32, seed: u64) -> HashedValue {
    let mut bytes = [0u8; 9];
    bytes[..4].copy_from_slice(&a.to_le_bytes());
    bytes[4] = NAME_VALUE_SEPARATOR;
    bytes[5..].copy_from_slice(&b.to_le_bytes());
    reduce(mix64(fnv1a64(seed, &bytes)), bucket_count.max(2))
}
