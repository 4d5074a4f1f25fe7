//! Seeded synthetic tensors for demos, benchmarks and tests.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StudentT};

use crate::{Error, Result, WeightMatrix};

/// Student-t entries scaled by `scale`; small `dof` gives heavy tails.
pub fn heavy_tailed_matrix(
    name: impl Into<String>,
    rows: usize,
    cols: usize,
    dof: f64,
    scale: f32,
    seed: u64,
) -> Result<WeightMatrix> {
    let t = StudentT::new(dof).map_err(|_| Error::InvalidConfig(alloc::format!("dof must be positive, got {dof}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rows.checked_mul(cols).ok_or(Error::DimensionOverflow)?;
    let values: Vec<f32> = (0..n).map(|_| t.sample(&mut rng) as f32 * scale).collect();
    WeightMatrix::new(name, rows, cols, values)
}

/// Uniform values in `[-1, 1)`.
pub fn uniform_vector(len: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}
