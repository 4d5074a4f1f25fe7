//! Exact weighted 1-D k-means by dynamic programming.
//!
//! Optimal weighted clusters in one dimension are contiguous runs of the
//! sorted values, so the best partition into `m` runs follows from
//! `best[m][j] = min_i best[m-1][i] + cost(i..j)` with interval costs taken
//! from prefix sums. This is `O(k n^2)` and meant for checking the Lloyd
//! solver on small inputs, not for production use.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Inputs larger than this are rejected.
pub const ORACLE_MAX_N: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleFit {
    /// Optimal weighted objective, evaluated directly on the optimal partition.
    pub objective: f64,
    /// Weighted mean of each run, ascending; `min(k, n)` entries.
    pub centroids: Vec<f64>,
}

#[allow(clippy::needless_range_loop)]
pub fn dp_kmeans_oracle(values: &[f32], weights: &[f64], k: usize) -> Result<OracleFit> {
    let n = values.len();
    if n != weights.len() {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: weights.len(),
        });
    }
    if k == 0 {
        return Err(Error::ZeroClusters);
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if n > ORACLE_MAX_N {
        return Err(Error::OracleTooLarge { n, limit: ORACLE_MAX_N });
    }
    if let Some(index) = weights.iter().position(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::NegativeValue { index });
    }

    let mut pairs: Vec<(f64, f64)> = values
        .iter()
        .map(|&v| f64::from(v))
        .zip(weights.iter().copied())
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pairs.iter().map(|p| p.1).sum::<f64>() == 0.0 {
        pairs.iter_mut().for_each(|p| p.1 = 1.0);
    }

    // Centering keeps the prefix-sum variance formula well conditioned.
    let total_w: f64 = pairs.iter().map(|p| p.1).sum();
    let shift = pairs.iter().map(|p| p.0 * p.1).sum::<f64>() / total_w;
    let mut p0 = vec![0.0f64; n + 1];
    let mut p1 = vec![0.0f64; n + 1];
    let mut p2 = vec![0.0f64; n + 1];
    for (i, &(x, w)) in pairs.iter().enumerate() {
        let x = x - shift;
        p0[i + 1] = p0[i] + w;
        p1[i + 1] = p1[i] + w * x;
        p2[i + 1] = p2[i] + w * x * x;
    }
    let cost = |i: usize, j: usize| -> f64 {
        let w = p0[j] - p0[i];
        if w <= 0.0 {
            return 0.0;
        }
        let s = p1[j] - p1[i];
        (p2[j] - p2[i] - s * s / w).max(0.0)
    };

    let m = k.min(n);
    // best[j] for the current number of runs over the first j values.
    let mut best: Vec<f64> = (0..=n).map(|j| cost(0, j)).collect();
    let mut split = vec![vec![0usize; n + 1]; m];
    for runs in 1..m {
        let mut next = vec![f64::INFINITY; n + 1];
        for j in (runs + 1)..=n {
            let mut arg = runs;
            let mut val = f64::INFINITY;
            for i in runs..j {
                let v = best[i] + cost(i, j);
                if v < val {
                    val = v;
                    arg = i;
                }
            }
            next[j] = val;
            split[runs][j] = arg;
        }
        best = next;
    }

    let mut bounds = vec![n];
    let mut j = n;
    for runs in (1..m).rev() {
        j = split[runs][j];
        bounds.push(j);
    }
    bounds.push(0);
    bounds.reverse();

    let mut centroids = Vec::with_capacity(m);
    let mut objective = 0.0;
    for seg in bounds.windows(2) {
        let run = &pairs[seg[0]..seg[1]];
        let w: f64 = run.iter().map(|p| p.1).sum();
        let mean = if w > 0.0 {
            run.iter().map(|p| p.0 * p.1).sum::<f64>() / w
        } else {
            run.iter().map(|p| p.0).sum::<f64>() / run.len() as f64
        };
        objective += run.iter().map(|p| p.1 * (p.0 - mean) * (p.0 - mean)).sum::<f64>();
        centroids.push(mean);
    }
    Ok(OracleFit { objective, centroids })
}
