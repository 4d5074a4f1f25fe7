//! Matrix-vector products over the quantized representation.
//!
//! Every kernel multiplies in f64 (a product of two f32 values is exact
//! there) and accumulates in ascending column order, one accumulator per
//! output row. The fused kernel keeps the dense and sparse sums in
//! separate accumulators and adds them at the end, which is what makes the
//! hybrid and plain CSR paths produce identical bits.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::dns::CsrMatrix;
use crate::packfmt::{read_index, PackedDense, QuantizedLayer};
use crate::{Error, Result, WeightMatrix};

/// Dense input activations.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationVector {
    values: Vec<f32>,
}

impl ActivationVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_len(cols: usize, x: &ActivationVector) -> Result<()> {
    if x.len() == cols {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            expected: cols,
            actual: x.len(),
        })
    }
}

#[inline]
fn dot(row: &[f32], x: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (&w, &v) in row.iter().zip(x) {
        acc += f64::from(w) * f64::from(v);
    }
    acc
}

#[inline]
fn lut_row(packed: &PackedDense, r: usize, x: &[f32]) -> f64 {
    let bits = packed.bits();
    let row = packed.row_payload(r);
    let g = packed.group_len();
    let mut acc = 0.0f64;
    for (gi, xs) in x.chunks_exact(g).enumerate() {
        let lut = packed.lut(r, gi);
        for (j, &v) in xs.iter().enumerate() {
            let idx = read_index(row, gi * g + j, bits);
            acc += f64::from(lut[usize::from(idx)]) * f64::from(v);
        }
    }
    acc
}

#[inline]
fn csr_row(sparse: &CsrMatrix, r: usize, x: &[f32]) -> f64 {
    let (cols, vals) = sparse.row(r);
    let mut acc = 0.0f64;
    for (&c, &v) in cols.iter().zip(vals) {
        acc += f64::from(v) * f64::from(x[c as usize]);
    }
    acc
}

/// Full-precision product `W x`.
pub fn dense_matvec(matrix: &WeightMatrix, x: &ActivationVector) -> Result<Vec<f64>> {
    check_len(matrix.cols(), x)?;
    Ok((0..matrix.rows()).map(|r| dot(matrix.row(r), x.values())).collect())
}

/// Product of the LUT-dequantized dense part with `x`.
pub fn lut_matvec(packed: &PackedDense, x: &ActivationVector) -> Result<Vec<f64>> {
    check_len(packed.cols(), x)?;
    Ok((0..packed.rows()).map(|r| lut_row(packed, r, x.values())).collect())
}

pub fn csr_matvec(sparse: &CsrMatrix, x: &ActivationVector) -> Result<Vec<f64>> {
    check_len(sparse.cols(), x)?;
    Ok((0..sparse.rows()).map(|r| csr_row(sparse, r, x.values())).collect())
}

/// `D x + S x` for a quantized layer, with promoted sparse rows handled as
/// dense rows and the rest through CSR.
pub fn fused_dns_matvec(layer: &QuantizedLayer, x: &ActivationVector) -> Result<Vec<f64>> {
    let mut out = vec![0.0; layer.rows()];
    fused_dns_rows(layer, x, 0..layer.rows(), &mut out)?;
    Ok(out)
}

/// Computes output rows `rows` of [`fused_dns_matvec`] into `out`, which
/// must have one slot per row in the range. Each row is independent, so
/// callers may split the row range across workers.
pub fn fused_dns_rows(layer: &QuantizedLayer, x: &ActivationVector, rows: Range<usize>, out: &mut [f64]) -> Result<()> {
    check_len(layer.cols(), x)?;
    if rows.end > layer.rows() || out.len() != rows.len() {
        return Err(Error::LengthMismatch {
            expected: rows.len(),
            actual: out.len(),
        });
    }
    let hybrid = &layer.hybrid;
    if hybrid.residual.rows() != layer.rows() || hybrid.residual.cols() != layer.cols() {
        return Err(Error::InvalidLayer("hybrid split shape differs from layer".into()));
    }
    let mut promoted = vec![usize::MAX; layer.rows()];
    for (slot, &r) in hybrid.dense_row_ids.iter().enumerate() {
        match promoted.get_mut(r) {
            Some(p) => *p = slot,
            None => return Err(Error::InvalidLayer("promoted row out of range".into())),
        }
    }
    let xs = x.values();
    for (o, r) in out.iter_mut().zip(rows) {
        let dense = lut_row(&layer.packed, r, xs);
        let sparse = match promoted[r] {
            usize::MAX => csr_row(&hybrid.residual, r, xs),
            slot => dot(&hybrid.promoted_rows[slot], xs),
        };
        *o = dense + sparse;
    }
    Ok(())
}

/// Oracle for [`fused_dns_matvec`]: dequantize the dense part and densify
/// the sparse part explicitly, then multiply each with the same summation
/// order.
pub fn reference_matvec(layer: &QuantizedLayer, x: &ActivationVector) -> Result<Vec<f64>> {
    check_len(layer.cols(), x)?;
    let cols = layer.cols();
    let dense = layer.packed.dequantize();
    let sparse = layer.sparse.densify();
    Ok(dense
        .chunks_exact(cols)
        .zip(sparse.chunks_exact(cols))
        .map(|(d, s)| dot(d, x.values()) + dot(s, x.values()))
        .collect())
}
