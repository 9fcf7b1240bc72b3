//! Plug-in mutual information between a discrete feature column and a binary
//! label, computed from exact joint counts over the rows where the feature
//! is present.

use super::RankingError;

/// Largest value domain accepted by the MI estimators; bounds the joint-count
/// table. Columns themselves may declare any arity.
pub const MAX_ARITY: u32 = 1 << 16;

/// A column that stores only its present rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseColumn {
    len: usize,
    indices: Vec<u32>,
    values: Vec<u32>,
    arity: u32,
}

impl SparseColumn {
    /// `indices` must be strictly increasing and `< len`; every value must be
    /// `< arity`.
    pub fn new(
        len: usize,
        indices: Vec<u32>,
        values: Vec<u32>,
        arity: u32,
    ) -> Result<Self, RankingError> {
        if indices.len() != values.len() {
            return Err(RankingError::Column(format!(
                "{} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        if arity == 0 {
            return Err(RankingError::Column("arity must be positive".into()));
        }
        if len > u32::MAX as usize {
            return Err(RankingError::Column(format!("length {len} exceeds u32 range")));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(RankingError::Column("indices not strictly increasing".into()));
        }
        if indices.last().is_some_and(|&i| i as usize >= len) {
            return Err(RankingError::Column("index beyond column length".into()));
        }
        if let Some(v) = values.iter().find(|&&v| v >= arity) {
            return Err(RankingError::Column(format!("value {v} not below arity {arity}")));
        }
        Ok(SparseColumn {
            len,
            indices,
            values,
            arity,
        })
    }

    /// Builds from a dense column with explicit missing markers.
    pub fn from_dense(dense: &[Option<u32>], arity: u32) -> Result<Self, RankingError> {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i as u32, v)))
            .unzip();
        SparseColumn::new(dense.len(), indices, values, arity)
    }

    pub(crate) fn from_parts_unchecked(
        len: usize,
        indices: Vec<u32>,
        values: Vec<u32>,
        arity: u32,
    ) -> Self {
        debug_assert!(SparseColumn::new(len, indices.clone(), values.clone(), arity).is_ok());
        SparseColumn {
            len,
            indices,
            values,
            arity,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn arity(&self) -> u32 {
        self.arity
    }

    pub fn present(&self) -> usize {
        self.indices.len()
    }

    pub fn density(&self) -> f64 {
        if self.len == 0 {
            0.0
        } else {
            self.indices.len() as f64 / self.len as f64
        }
    }
}

/// MI(X;Y) in bits over the rows where `x` is present. Cost is linear in the
/// number of present rows plus the table size, independent of `x.len()`.
pub fn mutual_information_sparse(x: &SparseColumn, y: &[u8]) -> Result<f64, RankingError> {
    if y.len() != x.len {
        return Err(RankingError::Misaligned {
            expected: x.len,
            got: y.len(),
        });
    }
    if x.arity > MAX_ARITY {
        return Err(RankingError::Column(format!(
            "arity {} exceeds {MAX_ARITY}; reduce values first",
            x.arity
        )));
    }
    let mut joint = vec![0u64; x.arity as usize * 2];
    for (&row, &v) in x.indices.iter().zip(&x.values) {
        let label = y[row as usize];
        if label > 1 {
            return Err(RankingError::Label(label));
        }
        joint[v as usize * 2 + label as usize] += 1;
    }
    Ok(mi_from_joint(&joint))
}

/// Reference path over a dense column: visits every row and skips the
/// missing ones.
pub fn mutual_information_dense(
    x: &[Option<u32>],
    arity: u32,
    y: &[u8],
) -> Result<f64, RankingError> {
    if y.len() != x.len() {
        return Err(RankingError::Misaligned {
            expected: x.len(),
            got: y.len(),
        });
    }
    if arity == 0 || arity > MAX_ARITY {
        return Err(RankingError::Column(format!("arity {arity} outside [1, {MAX_ARITY}]")));
    }
    let mut joint = vec![0u64; arity as usize * 2];
    for (v, &label) in x.iter().zip(y) {
        if let Some(v) = *v {
            if v >= arity {
                return Err(RankingError::Column(format!("value {v} not below arity {arity}")));
            }
            if label > 1 {
                return Err(RankingError::Label(label));
            }
            joint[v as usize * 2 + label as usize] += 1;
        }
    }
    Ok(mi_from_joint(&joint))
}

/// `joint` is laid out as `[x0y0, x0y1, x1y0, x1y1, ...]`.
fn mi_from_joint(joint: &[u64]) -> f64 {
    let y0: u64 = joint.iter().step_by(2).sum();
    let y1: u64 = joint.iter().skip(1).step_by(2).sum();
    let n = y0 + y1;
    if n < 2 || y0 == 0 || y1 == 0 {
        return 0.0;
    }
    let occupied = joint.chunks_exact(2).filter(|c| c[0] + c[1] > 0).count();
    if occupied < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let ys = [y0 as f64, y1 as f64];
    let mut mi = 0.0;
    for cell in joint.chunks_exact(2) {
        let cx = (cell[0] + cell[1]) as f64;
        if cx == 0.0 {
            continue;
        }
        for (c, cy) in cell.iter().zip(ys) {
            if *c > 0 {
                let c = *c as f64;
                mi += c / nf * ((c * nf) / (cx * cy)).log2();
            }
        }
    }
    mi.max(0.0)
}
