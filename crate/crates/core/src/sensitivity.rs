//! Per-weight importance maps.
//!
//! The main route is the diagonal of the empirical Fisher information,
//! `F_ii = (1/|D|) * sum_d g_d[i]^2`, used as a stand-in for the Hessian
//! diagonal of the loss. The activation route weights each input column by
//! its mean squared activation, which is the diagonal proxy for minimizing a
//! layer's output error `||WX - W_Q X||^2` instead of the final loss.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result, WeightMatrix};

/// Non-negative importance for every weight of one matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMap {
    matrix_name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl SensitivityMap {
    pub fn new(matrix_name: impl Into<String>, rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyDimension { rows, cols });
        }
        let n = rows.checked_mul(cols).ok_or(Error::DimensionOverflow)?;
        if values.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: values.len(),
            });
        }
        for (index, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { index });
            }
            if *v < 0.0 {
                return Err(Error::NegativeValue { index });
            }
        }
        Ok(Self {
            matrix_name: matrix_name.into(),
            rows,
            cols,
            values,
        })
    }

    /// Every weight equally important; this is plain (unweighted) k-means.
    pub fn uniform(matrix: &WeightMatrix) -> Self {
        Self {
            matrix_name: matrix.name().into(),
            rows: matrix.rows(),
            cols: matrix.cols(),
            values: vec![1.0; matrix.len()],
        }
    }

    pub fn matrix_name(&self) -> &str {
        &self.matrix_name
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Multiplies every entry by `factor` (must be finite and non-negative).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.matrix_name.clone(),
            self.rows,
            self.cols,
            self.values.iter().map(|v| v * factor).collect(),
        )
    }

    pub fn check_matches(&self, matrix: &WeightMatrix) -> Result<()> {
        matrix.check_shape(self.rows, self.cols)
    }
}

/// Per-sample loss gradients for one weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSampleSet {
    matrix_name: String,
    rows: usize,
    cols: usize,
    samples: Vec<Vec<f32>>,
}

impl GradientSampleSet {
    pub fn new(matrix_name: impl Into<String>, rows: usize, cols: usize, samples: Vec<Vec<f32>>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyDimension { rows, cols });
        }
        let n = rows.checked_mul(cols).ok_or(Error::DimensionOverflow)?;
        for s in &samples {
            if s.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: s.len(),
                });
            }
            if let Some(index) = s.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue { index });
            }
        }
        Ok(Self {
            matrix_name: matrix_name.into(),
            rows,
            cols,
            samples,
        })
    }

    /// Builds a set from matrices that must all share one shape.
    pub fn from_matrices(matrix_name: impl Into<String>, samples: Vec<WeightMatrix>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptySampleSet)?;
        let (rows, cols) = (first.rows(), first.cols());
        for s in &samples {
            first.check_shape(s.rows(), s.cols())?;
        }
        Self::new(
            matrix_name,
            rows,
            cols,
            samples.into_iter().map(WeightMatrix::into_values).collect(),
        )
    }

    pub fn matrix_name(&self) -> &str {
        &self.matrix_name
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[Vec<f32>] {
        &self.samples
    }

    pub fn scaled(&self, factor: f32) -> Result<Self> {
        Self::new(
            self.matrix_name.clone(),
            self.rows,
            self.cols,
            self.samples
                .iter()
                .map(|s| s.iter().map(|g| g * factor).collect())
                .collect(),
        )
    }
}

/// Diagonal Fisher information: the mean over samples of squared gradients.
///
/// Samples are accumulated in ascending index order so the result is
/// reproducible bit for bit.
pub fn fisher_diagonal(grads: &GradientSampleSet) -> SensitivityMap {
    let n = grads.rows * grads.cols;
    let mut acc = vec![0.0f64; n];
    for sample in &grads.samples {
        for (a, g) in acc.iter_mut().zip(sample) {
            let g = f64::from(*g);
            *a += g * g;
        }
    }
    let inv = grads.samples.len() as f64;
    for a in &mut acc {
        *a /= inv;
    }
    SensitivityMap {
        matrix_name: grads.matrix_name.clone(),
        rows: grads.rows,
        cols: grads.cols,
        values: acc,
    }
}

/// Activation-squared importance: weight `(r, c)` gets the mean of `x[c]^2`
/// over the supplied input activations, identical for every row `r`.
pub fn activation_sensitivity(
    matrix_name: impl Into<String>,
    rows: usize,
    acts: &[Vec<f64>],
) -> Result<SensitivityMap> {
    let first = acts.first().ok_or(Error::EmptySampleSet)?;
    let cols = first.len();
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyDimension { rows, cols });
    }
    let mut col_weight = vec![0.0f64; cols];
    for x in acts {
        if x.len() != cols {
            return Err(Error::LengthMismatch {
                expected: cols,
                actual: x.len(),
            });
        }
        for (w, v) in col_weight.iter_mut().zip(x) {
            *w += v * v;
        }
    }
    let n = acts.len() as f64;
    for w in &mut col_weight {
        *w /= n;
    }
    let mut values = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        values.extend_from_slice(&col_weight);
    }
    SensitivityMap::new(matrix_name, rows, cols, values)
}
