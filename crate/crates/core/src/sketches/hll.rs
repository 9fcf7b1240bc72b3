//! HyperLogLog distinct counter over 64-bit hashes.

use crate::model::{fnv1a64, mix64, HashedValue};

use super::SketchError;

pub const MIN_PRECISION: u8 = 4;
pub const MAX_PRECISION: u8 = 16;
/// p=12: 4096 registers, ~1.63% standard error.
pub const DEFAULT_PRECISION: u8 = 12;

const RAW_BYTES_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HllSketch {
    precision: u8,
    registers: Vec<u8>,
}

impl HllSketch {
    pub fn new(precision: u8) -> Result<Self, SketchError> {
        if !(MIN_PRECISION..=MAX_PRECISION).contains(&precision) {
            return Err(SketchError::Precision(precision));
        }
        Ok(HllSketch {
            precision,
            registers: vec![0; 1 << precision],
        })
    }

    pub fn precision(&self) -> u8 {
        self.precision
    }

    pub fn registers(&self) -> &[u8] {
        &self.registers
    }

    pub fn is_empty(&self) -> bool {
        self.registers.iter().all(|&r| r == 0)
    }

    pub fn clear(&mut self) {
        self.registers.fill(0);
    }

    /// Inserts a well-mixed 64-bit hash. The top `p` bits pick the register,
    /// the rank is the position of the first set bit in the rest.
    pub fn insert_hash(&mut self, hash: u64) {
        let p = u32::from(self.precision);
        let idx = (hash >> (64 - p)) as usize;
        // sentinel bit caps the rank at 64 - p + 1 (<= 61 for p >= 4)
        let rest = (hash << p) | (1u64 << (p - 1));
        let rank = (rest.leading_zeros() + 1) as u8;
        let slot = &mut self.registers[idx];
        if *slot < rank {
            *slot = rank;
        }
    }

    pub fn insert_bytes(&mut self, bytes: &[u8]) {
        self.insert_hash(mix64(fnv1a64(RAW_BYTES_SEED, bytes)));
    }

    pub fn insert(&mut self, item: HashedValue) {
        self.insert_hash(mix64(u64::from(item.bucket()) ^ RAW_BYTES_SEED));
    }

    /// Cardinality estimate with the linear-counting correction below
    /// 2.5·m when empty registers remain. No large-range correction.
    pub fn estimate(&self) -> f64 {
        let m = self.registers.len() as f64;
        let mut zeros = 0usize;
        let mut sum = 0.0f64;
        for &r in &self.registers {
            if r == 0 {
                zeros += 1;
            }
            sum += f64::from_bits((1023u64 - u64::from(r)) << 52);
        }
        if zeros == self.registers.len() {
            return 0.0;
        }
        let alpha = match self.registers.len() {
            16 => 0.673,
            32 => 0.697,
            64 => 0.709,
            _ => 0.7213 / (1.0 + 1.079 / m),
        };
        let raw = alpha * m * m / sum;
        if raw <= 2.5 * m && zeros > 0 {
            m * (m / zeros as f64).ln()
        } else {
            raw
        }
    }

    /// In-place union: register-wise maximum.
    pub fn merge_from(&mut self, other: &HllSketch) -> Result<(), SketchError> {
        if self.precision != other.precision {
            return Err(SketchError::PrecisionMismatch(self.precision, other.precision));
        }
        for (a, &b) in self.registers.iter_mut().zip(&other.registers) {
            if *a < b {
                *a = b;
            }
        }
        Ok(())
    }
}

pub fn hll_merge(a: &HllSketch, b: &HllSketch) -> Result<HllSketch, SketchError> {
    let mut out = a.clone();
    out.merge_from(b)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn precision_bounds() {
        assert!(HllSketch::new(3).is_err());
        assert!(HllSketch::new(17).is_err());
        assert_eq!(HllSketch::new(12).unwrap().registers().len(), 4096);
    }

    #[test]
    fn empty_estimates_zero() {
        assert_eq!(HllSketch::new(12).unwrap().estimate(), 0.0);
    }

    #[test]
    fn repeated_item_counts_once() {
        let mut h = HllSketch::new(12).unwrap();
        h.insert_bytes(b"a");
        h.insert_bytes(b"a");
        assert_eq!(h.estimate().round(), 1.0);
    }

    #[test]
    fn tiny_sets_are_exact_after_rounding() {
        let mut h = HllSketch::new(12).unwrap();
        for item in [b"a", b"b", b"c"] {
            h.insert_bytes(item);
        }
        // linear counting: 4096·ln(4096/4093)
        let oracle = 4096.0f64 * (4096.0f64 / 4093.0).ln();
        assert!((h.estimate() - oracle).abs() < 1e-9);
        assert_eq!(h.estimate().round(), 3.0);
    }

    #[test]
    fn merge_rejects_mismatch() {
        let a = HllSketch::new(10).unwrap();
        let b = HllSketch::new(12).unwrap();
        assert_eq!(hll_merge(&a, &b), Err(SketchError::PrecisionMismatch(10, 12)));
    }

    #[test]
    fn disjoint_union_estimate() {
        let mut a = HllSketch::new(12).unwrap();
        let mut b = HllSketch::new(12).unwrap();
        for i in 0..10_000u32 {
            a.insert_bytes(&i.to_le_bytes());
            b.insert_bytes(&(i + 10_000).to_le_bytes());
        }
        let u = hll_merge(&a, &b).unwrap().estimate();
        assert!((u - 20_000.0).abs() <= 0.05 * 20_000.0, "{u}");
    }

    #[test]
    fn merge_identity_and_idempotence() {
        let mut x = HllSketch::new(8).unwrap();
        for i in 0..500u32 {
            x.insert_bytes(&i.to_be_bytes());
        }
        let empty = HllSketch::new(8).unwrap();
        assert_eq!(hll_merge(&empty, &x).unwrap(), x);
        assert_eq!(hll_merge(&x, &x).unwrap(), x);
    }

    proptest! {
        #[test]
        fn merge_equals_union_stream(
            left in proptest::collection::vec(any::<u64>(), 0..300),
            right in proptest::collection::vec(any::<u64>(), 0..300),
        ) {
            let mut a = HllSketch::new(10).unwrap();
            let mut b = HllSketch::new(10).unwrap();
            let mut u = HllSketch::new(10).unwrap();
            for x in &left { a.insert_hash(mix64(*x)); u.insert_hash(mix64(*x)); }
            for x in &right { b.insert_hash(mix64(*x)); u.insert_hash(mix64(*x)); }
            let ab = hll_merge(&a, &b).unwrap();
            prop_assert_eq!(&ab, &hll_merge(&b, &a).unwrap());
            prop_assert_eq!(&ab, &u);
            prop_assert!(ab.estimate() >= a.estimate().max(b.estimate()));
        }

        #[test]
        fn registers_only_grow(items in proptest::collection::vec(any::<u64>(), 1..200)) {
            let mut h = HllSketch::new(6).unwrap();
            for x in items {
                let before = h.registers().to_vec();
                h.insert_hash(x);
                prop_assert!(before.iter().zip(h.registers()).all(|(b, a)| a >= b));
                prop_assert!(h.registers().iter().all(|&r| r <= 63));
            }
        }
    }
}
