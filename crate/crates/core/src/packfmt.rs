//! Packed index storage and bit accounting.
//!
//! Each row of codebook indices is a little bit stream: index `c` occupies
//! stream bits `c*bits .. (c+1)*bits`, least significant bit first, and
//! stream bit `p` is bit `p % 8` of byte `p / 8`. Rows are padded with zero
//! bits to a whole byte so every row can be addressed on its own.
//!
//! Accounting charges 16 bits per LUT entry, 16 bits per sparse value,
//! 16 bits per sparse column index and 32 bits per row pointer, regardless
//! of the in-memory widths.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, AddAssign};

use crate::dns::{CsrMatrix, HybridSplit};
use crate::math::fraction_count;
use crate::nuq::{AssignmentVector, QuantConfig, MASKED};
use crate::{Error, Result, WeightMatrix};

pub const LUT_ENTRY_BITS: u64 = 16;
pub const SPARSE_VALUE_BITS: u64 = 16;
pub const SPARSE_COL_BITS: u64 = 16;
pub const ROW_PTR_BITS: u64 = 32;
/// Full-precision reference width for compression ratios.
pub const BASELINE_BITS: f64 = 16.0;
/// Sparse column indices are 16 bits wide, so matrices must be narrower.
pub const MAX_COLS: usize = 1 << 16;

pub fn row_bytes(cols: usize, bits: u8) -> usize {
    (cols * usize::from(bits)).div_ceil(8)
}

fn check_bits(bits: u8) -> Result<()> {
    if (1..=8).contains(&bits) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(alloc::format!(
            "packed width must be in 1..=8, got {bits}"
        )))
    }
}

/// Packs `rows * cols` indices. [`MASKED`] positions are written as 0.
pub fn pack(assign: &AssignmentVector, bits: u8, rows: usize, cols: usize) -> Result<Vec<u8>> {
    check_bits(bits)?;
    if assign.len() != rows * cols {
        return Err(Error::LengthMismatch {
            expected: rows * cols,
            actual: assign.len(),
        });
    }
    assign.check_bits(bits)?;
    let stride = row_bytes(cols, bits);
    let mut out = vec![0u8; rows * stride];
    for (dst, src) in out.chunks_exact_mut(stride).zip(assign.indices().chunks_exact(cols)) {
        let mut pos = 0usize;
        for &idx in src {
            let idx = if idx == MASKED { 0 } else { u32::from(idx) };
            let shifted = idx << (pos % 8);
            let byte = pos / 8;
            dst[byte] |= shifted as u8;
            if shifted > 0xff {
                dst[byte + 1] |= (shifted >> 8) as u8;
            }
            pos += usize::from(bits);
        }
    }
    Ok(out)
}

/// Inverse of [`pack`]. With `strict`, non-zero padding bits are an error.
pub fn unpack(payload: &[u8], bits: u8, rows: usize, cols: usize, strict: bool) -> Result<AssignmentVector> {
    check_bits(bits)?;
    let stride = row_bytes(cols, bits);
    let expected = rows * stride;
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::TrailingBytes(payload.len() - expected));
    }
    let mut out = Vec::with_capacity(rows * cols);
    for (r, row) in payload.chunks_exact(stride.max(1)).take(rows).enumerate() {
        for c in 0..cols {
            out.push(read_index(row, c, bits));
        }
        let used = cols * usize::from(bits);
        if strict && !used.is_multiple_of(8) && row[stride - 1] >> (used % 8) != 0 {
            return Err(Error::NonZeroPadding { row: r });
        }
    }
    Ok(AssignmentVector::new(out))
}

/// Index `col` of a packed row.
#[inline]
pub fn read_index(row: &[u8], col: usize, bits: u8) -> u16 {
    let pos = col * usize::from(bits);
    let byte = pos / 8;
    let lo = u16::from(row[byte]);
    let hi = row.get(byte + 1).map_or(0, |&b| u16::from(b));
    ((lo | hi << 8) >> (pos % 8)) & ((1u16 << bits) - 1)
}

/// Packed indices plus one lookup table per channel (or column group).
#[derive(Debug, Clone, PartialEq)]
pub struct PackedDense {
    bits: u8,
    rows: usize,
    cols: usize,
    group_len: usize,
    luts: Vec<f32>,
    payload: Vec<u8>,
}

impl PackedDense {
    pub fn new(bits: u8, rows: usize, cols: usize, group_len: usize, luts: Vec<f32>, payload: Vec<u8>) -> Result<Self> {
        check_bits(bits)?;
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyDimension { rows, cols });
        }
        if group_len == 0 || !cols.is_multiple_of(group_len) {
            return Err(Error::GroupSize {
                group_size: group_len,
                cols,
            });
        }
        let lut_len = rows * (cols / group_len) * (1usize << bits);
        if luts.len() != lut_len {
            return Err(Error::LengthMismatch {
                expected: lut_len,
                actual: luts.len(),
            });
        }
        if let Some(index) = luts.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        let expected = rows * row_bytes(cols, bits);
        if payload.len() != expected {
            return Err(Error::Truncated {
                expected,
                actual: payload.len(),
            });
        }
        Ok(Self {
            bits,
            rows,
            cols,
            group_len,
            luts,
            payload,
        })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn group_len(&self) -> usize {
        self.group_len
    }

    pub fn groups_per_row(&self) -> usize {
        self.cols / self.group_len
    }

    pub fn lut_count(&self) -> usize {
        self.rows * self.groups_per_row()
    }

    pub fn luts(&self) -> &[f32] {
        &self.luts
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn row_bytes(&self) -> usize {
        row_bytes(self.cols, self.bits)
    }

    pub fn row_payload(&self, row: usize) -> &[u8] {
        let stride = self.row_bytes();
        &self.payload[row * stride..(row + 1) * stride]
    }

    /// Lookup table for `(row, group)`.
    pub fn lut(&self, row: usize, group: usize) -> &[f32] {
        let k = 1usize << self.bits;
        let start = (row * self.groups_per_row() + group) * k;
        &self.luts[start..start + k]
    }

    pub fn index(&self, row: usize, col: usize) -> u16 {
        read_index(self.row_payload(row), col, self.bits)
    }

    pub fn value(&self, row: usize, col: usize) -> f32 {
        self.lut(row, col / self.group_len)[usize::from(self.index(row, col))]
    }

    pub fn unpack(&self) -> AssignmentVector {
        unpack(&self.payload, self.bits, self.rows, self.cols, false).expect("length checked on construction")
    }

    /// Every position through its lookup table, row-major.
    pub fn dequantize(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(self.value(r, c));
            }
        }
        out
    }
}

/// Bits spent on one layer, or summed over several.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StorageBreakdown {
    pub weights: u64,
    pub dense_index_bits: u64,
    pub lut_bits: u64,
    pub csr_bits: u64,
}

impl StorageBreakdown {
    /// Bits for a `rows x cols` layer at `bits` per index with `lut_count`
    /// tables and `nnz` sparse entries, computed from shape alone.
    pub fn for_layout(rows: usize, cols: usize, bits: u8, lut_count: usize, nnz: usize) -> Self {
        let csr_bits = if nnz == 0 {
            0
        } else {
            nnz as u64 * (SPARSE_VALUE_BITS + SPARSE_COL_BITS) + (rows as u64 + 1) * ROW_PTR_BITS
        };
        Self {
            weights: (rows * cols) as u64,
            dense_index_bits: (rows * row_bytes(cols, bits)) as u64 * 8,
            lut_bits: lut_count as u64 * (1u64 << bits) * LUT_ENTRY_BITS,
            csr_bits,
        }
    }

    /// Unquantized 16-bit storage.
    pub fn passthrough(rows: usize, cols: usize) -> Self {
        Self {
            weights: (rows * cols) as u64,
            dense_index_bits: (rows * cols) as u64 * 16,
            lut_bits: 0,
            csr_bits: 0,
        }
    }

    pub fn total_bits(&self) -> u64 {
        self.dense_index_bits + self.lut_bits + self.csr_bits
    }

    /// Bytes a single pass over the layer has to read.
    pub fn total_bytes(&self) -> f64 {
        self.total_bits() as f64 / 8.0
    }

    pub fn avg_bits(&self) -> f64 {
        self.total_bits() as f64 / self.weights as f64
    }

    pub fn compression_rate(&self) -> f64 {
        BASELINE_BITS / self.avg_bits()
    }
}

impl Add for StorageBreakdown {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            weights: self.weights + o.weights,
            dense_index_bits: self.dense_index_bits + o.dense_index_bits,
            lut_bits: self.lut_bits + o.lut_bits,
            csr_bits: self.csr_bits + o.csr_bits,
        }
    }
}

impl AddAssign for StorageBreakdown {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl core::iter::Sum for StorageBreakdown {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// A fully quantized weight matrix.
///
/// Sparse positions hold index 0 in the packed payload; their sparse value
/// is stored as `original - lut[0]` so that the dense and sparse products
/// add up to the intended weight.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub name: String,
    pub config: QuantConfig,
    pub packed: PackedDense,
    pub sparse: CsrMatrix,
    pub hybrid: HybridSplit,
}

impl QuantizedLayer {
    pub fn new(
        name: impl Into<String>,
        config: QuantConfig,
        packed: PackedDense,
        sparse: CsrMatrix,
        hybrid: HybridSplit,
    ) -> Result<Self> {
        let layer = Self {
            name: name.into(),
            config,
            packed,
            sparse,
            hybrid,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn validate(&self) -> Result<()> {
        let (rows, cols) = (self.packed.rows(), self.packed.cols());
        if cols >= MAX_COLS {
            return Err(Error::InvalidLayer(alloc::format!(
                "{cols} columns exceed the 16-bit index limit"
            )));
        }
        if self.sparse.rows() != rows || self.sparse.cols() != cols {
            return Err(Error::InvalidLayer("sparse shape differs from dense shape".into()));
        }
        self.sparse.validate()?;
        if self.hybrid.reconstruct() != self.sparse {
            return Err(Error::InvalidLayer(
                "hybrid split does not reproduce the sparse part".into(),
            ));
        }
        if self.hybrid.dense_row_ids.len() != self.hybrid.promoted_rows.len() {
            return Err(Error::InvalidLayer("promoted rows out of step with row ids".into()));
        }
        for (r, c, _) in self.sparse.iter() {
            if self.packed.index(r, c) != 0 {
                return Err(Error::InvalidLayer(alloc::format!(
                    "sparse position ({r}, {c}) has a non-zero dense index"
                )));
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.packed.rows()
    }

    pub fn cols(&self) -> usize {
        self.packed.cols()
    }

    pub fn storage(&self) -> StorageBreakdown {
        StorageBreakdown::for_layout(
            self.rows(),
            self.cols(),
            self.packed.bits(),
            self.packed.lut_count(),
            self.sparse.nnz(),
        )
    }

    pub fn avg_bits(&self) -> f64 {
        self.storage().avg_bits()
    }

    /// The effective quantized matrix: LUT values plus sparse deltas.
    pub fn dequantize(&self) -> WeightMatrix {
        let mut values = self.packed.dequantize();
        let cols = self.cols();
        for (r, c, v) in self.sparse.iter() {
            values[r * cols + c] += v;
        }
        WeightMatrix::new(self.name.clone(), self.rows(), cols, values).expect("finite by construction")
    }
}

/// Whole-model average over several layers.
pub fn model_storage<'a>(layers: impl IntoIterator<Item = &'a QuantizedLayer>) -> StorageBreakdown {
    layers.into_iter().map(QuantizedLayer::storage).sum()
}

/// Storage a `rows x cols` matrix will take under `cfg`, without quantizing
/// it: the sparse entry count is the one decomposition would extract.
pub fn planned_storage(rows: usize, cols: usize, cfg: &QuantConfig) -> Result<StorageBreakdown> {
    cfg.validate()?;
    let n = rows.checked_mul(cols).ok_or(Error::DimensionOverflow)?;
    let luts = rows * (cols / cfg.group_len(cols)?);
    let nnz = fraction_count(cfg.sensitive_fraction, n) + fraction_count(cfg.outlier_fraction, n);
    Ok(StorageBreakdown::for_layout(rows, cols, cfg.bits, luts, nnz))
}
