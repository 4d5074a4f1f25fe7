//! Dense-and-sparse decomposition.
//!
//! A weight matrix is split as `W = D + S`: `S` holds the most sensitive
//! weights and the largest-magnitude outliers at full precision in CSR
//! form, and `D` holds everything else, which then spans a much narrower
//! range `[t_min, t_max]` and quantizes better.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::math::fraction_count;
use crate::{Error, QuantConfig, Result, SensitivityMap, WeightMatrix};

/// Compressed sparse row matrix. Entries may be explicit zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<u32>,
    col_idx: Vec<u32>,
    values: Vec<f32>,
}

impl CsrMatrix {
    pub fn new(rows: usize, cols: usize, row_ptr: Vec<u32>, col_idx: Vec<u32>, values: Vec<f32>) -> Result<Self> {
        let m = Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from `(row, col, value)` triplets sorted by `(row, col)`.
    pub fn from_sorted_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f32)]) -> Result<Self> {
        let mut row_ptr = vec![0u32; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= rows {
                return Err(Error::InvalidCsr("row index out of range"));
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c as u32);
            values.push(v);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self::new(rows, cols, row_ptr, col_idx, values)
    }

    /// Keeps the non-zero entries of a dense row-major matrix.
    pub fn from_dense(rows: usize, cols: usize, dense: &[f32]) -> Result<Self> {
        let triplets: Vec<_> = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, &v)| (i / cols, i % cols, v))
            .collect();
        Self::from_sorted_triplets(rows, cols, &triplets)
    }

    pub fn validate(&self) -> Result<()> {
        if self.row_ptr.len() != self.rows + 1 {
            return Err(Error::InvalidCsr("row_ptr length must be rows + 1"));
        }
        if self.row_ptr[0] != 0 {
            return Err(Error::InvalidCsr("row_ptr[0] must be 0"));
        }
        if self.row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidCsr("row_ptr must be non-decreasing"));
        }
        let nnz = self.row_ptr[self.rows] as usize;
        if nnz != self.col_idx.len() || nnz != self.values.len() {
            return Err(Error::InvalidCsr("row_ptr[rows] must equal nnz"));
        }
        for r in 0..self.rows {
            let cols = &self.col_idx[self.row_ptr[r] as usize..self.row_ptr[r + 1] as usize];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidCsr(
                    "column indices must be strictly increasing within a row",
                ));
            }
            if cols.last().is_some_and(|&c| c as usize >= self.cols) {
                return Err(Error::InvalidCsr("column index out of range"));
            }
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCsr("non-finite value"));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[u32] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[u32] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row_nnz(&self, row: usize) -> usize {
        (self.row_ptr[row + 1] - self.row_ptr[row]) as usize
    }

    /// Column indices and values of one row.
    pub fn row(&self, row: usize) -> (&[u32], &[f32]) {
        let span = self.row_ptr[row] as usize..self.row_ptr[row + 1] as usize;
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f32)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c as usize, v))
        })
    }

    pub fn densify(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.rows * self.cols];
        for (r, c, v) in self.iter() {
            out[r * self.cols + c] = v;
        }
        out
    }

    /// Same pattern with every value replaced by `f(row, col, value)`.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f32) -> f32) -> Self {
        let values = self.iter().map(|(r, c, v)| f(r, c, v)).collect();
        Self { values, ..self.clone() }
    }

    fn keep_rows(&self, keep: impl Fn(usize) -> bool) -> Self {
        let triplets: Vec<_> = self.iter().filter(|(r, _, _)| keep(*r)).collect();
        Self::from_sorted_triplets(self.rows, self.cols, &triplets).expect("subset of a valid CSR is valid")
    }
}

/// Result of splitting a matrix into a dense remainder and a sparse part.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// Extracted positions are zero here.
    pub dense: WeightMatrix,
    /// `true` where the weight lives in `sparse`.
    pub mask: Vec<bool>,
    pub sparse: CsrMatrix,
    pub t_min: f32,
    pub t_max: f32,
    pub sensitive_count: usize,
    pub outlier_count: usize,
}

impl Decomposition {
    pub fn dense_range(&self) -> f32 {
        self.t_max - self.t_min
    }

    /// `D + S`, taking the sparse value at masked positions.
    pub fn reconstruct(&self) -> WeightMatrix {
        let mut values = self.dense.values().to_vec();
        for (r, c, v) in self.sparse.iter() {
            values[r * self.dense.cols() + c] = v;
        }
        WeightMatrix::new(self.dense.name(), self.dense.rows(), self.dense.cols(), values)
            .expect("shape and finiteness preserved")
    }
}

fn by_key_desc_then_index(keys: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b))
}

/// Marks the `ceil(sensitive_fraction * N)` most sensitive weights, then the
/// `ceil(outlier_fraction * N)` largest magnitudes among the rest, and moves
/// both into a CSR matrix. Ties break toward lower `(row, col)`.
pub fn decompose(matrix: &WeightMatrix, sens: &SensitivityMap, cfg: &QuantConfig) -> Result<Decomposition> {
    cfg.validate()?;
    let n = matrix.len();
    decompose_with_counts(
        matrix,
        sens,
        fraction_count(cfg.sensitive_fraction, n),
        fraction_count(cfg.outlier_fraction, n),
    )
}

/// [`decompose`] with explicit entry counts instead of fractions.
pub fn decompose_with_counts(
    matrix: &WeightMatrix,
    sens: &SensitivityMap,
    n_sens: usize,
    n_out: usize,
) -> Result<Decomposition> {
    sens.check_matches(matrix)?;
    let n = matrix.len();
    if n_sens + n_out >= n && n_sens + n_out > 0 {
        return Err(Error::SparseBudget {
            marked: n_sens + n_out,
            total: n,
        });
    }

    let mut mask = vec![false; n];
    if n_sens > 0 {
        let mut order: Vec<usize> = (0..n).collect();
        let cmp = by_key_desc_then_index(sens.values());
        order.select_nth_unstable_by(n_sens - 1, &cmp);
        for &i in &order[..n_sens] {
            mask[i] = true;
        }
    }
    if n_out > 0 {
        let magnitude: Vec<f64> = matrix.values().iter().map(|v| f64::from(v.abs())).collect();
        let mut order: Vec<usize> = (0..n).filter(|&i| !mask[i]).collect();
        let cmp = by_key_desc_then_index(&magnitude);
        order.select_nth_unstable_by(n_out - 1, &cmp);
        for &i in &order[..n_out] {
            mask[i] = true;
        }
    }

    let cols = matrix.cols();
    let mut dense = matrix.values().to_vec();
    let mut triplets = Vec::with_capacity(n_sens + n_out);
    let mut t_min = f32::INFINITY;
    let mut t_max = f32::NEG_INFINITY;
    for (i, (d, &m)) in dense.iter_mut().zip(&mask).enumerate() {
        if m {
            triplets.push((i / cols, i % cols, *d));
            *d = 0.0;
        } else {
            t_min = t_min.min(*d);
            t_max = t_max.max(*d);
        }
    }
    let sparse = CsrMatrix::from_sorted_triplets(matrix.rows(), cols, &triplets)?;
    Ok(Decomposition {
        dense: WeightMatrix::new(matrix.name(), matrix.rows(), cols, dense)?,
        mask,
        sparse,
        t_min,
        t_max,
        sensitive_count: n_sens,
        outlier_count: n_out,
    })
}

/// Sparse rows with the most entries pulled out for dense processing.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridSplit {
    pub top_k: usize,
    /// Promoted rows, most entries first.
    pub dense_row_ids: Vec<usize>,
    /// Dense copies of the promoted rows, parallel to `dense_row_ids`.
    pub promoted_rows: Vec<Vec<f32>>,
    /// The promoted rows in sparse form, kept so the split is lossless
    /// even for explicitly stored zeros.
    pub promoted: CsrMatrix,
    pub residual: CsrMatrix,
}

impl HybridSplit {
    /// Rebuilds a split for a known set of promoted rows.
    pub fn from_row_ids(sparse: &CsrMatrix, top_k: usize, dense_row_ids: Vec<usize>) -> Result<Self> {
        let mut is_promoted = vec![false; sparse.rows()];
        for &r in &dense_row_ids {
            if r >= sparse.rows() || is_promoted[r] {
                return Err(Error::InvalidCsr("bad promoted row id"));
            }
            is_promoted[r] = true;
        }
        if dense_row_ids.len() > top_k {
            return Err(Error::InvalidCsr("more promoted rows than top_k"));
        }
        let promoted_rows = dense_row_ids
            .iter()
            .map(|&r| {
                let mut row = vec![0.0; sparse.cols()];
                let (cols, vals) = sparse.row(r);
                for (&c, &v) in cols.iter().zip(vals) {
                    row[c as usize] = v;
                }
                row
            })
            .collect();
        Ok(Self {
            top_k,
            promoted: sparse.keep_rows(|r| is_promoted[r]),
            residual: sparse.keep_rows(|r| !is_promoted[r]),
            dense_row_ids,
            promoted_rows,
        })
    }

    /// Merges the promoted rows back into one CSR matrix.
    pub fn reconstruct(&self) -> CsrMatrix {
        let mut triplets: Vec<_> = self.promoted.iter().chain(self.residual.iter()).collect();
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        CsrMatrix::from_sorted_triplets(self.residual.rows(), self.residual.cols(), &triplets)
            .expect("disjoint rows of a valid CSR")
    }
}

/// Promotes up to `top_k` rows with the most non-zeros (ties: lower row
/// first). Rows without entries are never promoted, and `top_k` larger than
/// the row count is clamped.
pub fn hybrid_split(sparse: &CsrMatrix, top_k: usize) -> HybridSplit {
    let mut ranked: Vec<usize> = (0..sparse.rows()).filter(|&r| sparse.row_nnz(r) > 0).collect();
    ranked.sort_by(|&a, &b| sparse.row_nnz(b).cmp(&sparse.row_nnz(a)).then(a.cmp(&b)));
    ranked.truncate(top_k);
    HybridSplit::from_row_ids(sparse, top_k, ranked).expect("ids come from the matrix itself")
}
