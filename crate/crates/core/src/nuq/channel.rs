use alloc::vec;
use alloc::vec::Vec;

use super::{rtn_uniform, weighted_kmeans_1d, AssignmentVector, ClusterMethod, Codebook, QuantConfig, MASKED};
use crate::{Error, Result, SensitivityMap, WeightMatrix};

/// Codebooks and indices for a whole matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelQuant {
    pub bits: u8,
    pub rows: usize,
    pub cols: usize,
    /// Columns per codebook.
    pub group_len: usize,
    /// Row-major: `rows * (cols / group_len)` codebooks.
    pub codebooks: Vec<Codebook>,
    /// [`MASKED`] at masked positions.
    pub assignment: AssignmentVector,
}

impl ChannelQuant {
    pub fn groups_per_row(&self) -> usize {
        self.cols / self.group_len
    }

    pub fn codebook_for(&self, row: usize, col: usize) -> &Codebook {
        &self.codebooks[row * self.groups_per_row() + col / self.group_len]
    }

    /// Quantized value at every position; masked positions read as 0.
    pub fn dequantize(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            for c in 0..self.cols {
                let i = r * self.cols + c;
                let idx = self.assignment.indices()[i];
                if idx != MASKED {
                    out[i] = self.codebook_for(r, c).centroids()[usize::from(idx)];
                }
            }
        }
        out
    }
}

/// Builds one codebook per output channel (or per column group) from the
/// unmasked weights of that channel.
///
/// `mask[i] == true` excludes weight `i` from clustering; it receives the
/// [`MASKED`] sentinel. Channels are independent, so the result does not
/// depend on the order they are processed in.
pub fn quantize_channelwise(
    matrix: &WeightMatrix,
    sens: &SensitivityMap,
    mask: Option<&[bool]>,
    cfg: &QuantConfig,
) -> Result<ChannelQuant> {
    cfg.validate()?;
    sens.check_matches(matrix)?;
    let (rows, cols) = (matrix.rows(), matrix.cols());
    if let Some(m) = mask {
        if m.len() != matrix.len() {
            return Err(Error::LengthMismatch {
                expected: matrix.len(),
                actual: m.len(),
            });
        }
    }
    let group_len = cfg.group_len(cols)?;
    let k = 1usize << cfg.bits;
    let params = cfg.kmeans_params();

    let mut codebooks = Vec::with_capacity(rows * (cols / group_len));
    let mut indices = vec![MASKED; matrix.len()];
    let mut vals = Vec::with_capacity(group_len);
    let mut weights = Vec::with_capacity(group_len);
    let mut slots = Vec::with_capacity(group_len);

    for r in 0..rows {
        for (g, start) in (0..cols).step_by(group_len).enumerate() {
            vals.clear();
            weights.clear();
            slots.clear();
            for c in start..start + group_len {
                let i = r * cols + c;
                if mask.is_some_and(|m| m[i]) {
                    continue;
                }
                vals.push(matrix.values()[i]);
                weights.push(match cfg.method {
                    ClusterMethod::Weighted => sens.values()[i],
                    _ => 1.0,
                });
                slots.push(i);
            }
            if vals.is_empty() {
                return Err(Error::MaskedChannel { row: r, group: g });
            }
            let (codebook, assign) = match cfg.method {
                ClusterMethod::Rtn => rtn_uniform(&vals, cfg.bits)?,
                ClusterMethod::Weighted | ClusterMethod::Unweighted => {
                    let fit = weighted_kmeans_1d(&vals, &weights, k, &params)?;
                    (
                        Codebook::new(cfg.bits, fit.centroids)?,
                        AssignmentVector::new(fit.assignment),
                    )
                }
            };
            for (&slot, &a) in slots.iter().zip(assign.indices()) {
                indices[slot] = a;
            }
            codebooks.push(codebook);
        }
    }
    Ok(ChannelQuant {
        bits: cfg.bits,
        rows,
        cols,
        group_len,
        codebooks,
        assignment: AssignmentVector::new(indices),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuq::weighted_objective;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StudentT};

    fn cfg(bits: u8) -> QuantConfig {
        QuantConfig::dense_only(bits)
    }

    #[test]
    fn one_codebook_per_channel() {
        let m = WeightMatrix::new("w", 2, 4, vec![0.0, 1.0, 2.0, 3.0, -1.0, 0.5, 4.0, 9.0]).unwrap();
        let q = quantize_channelwise(&m, &SensitivityMap::uniform(&m), None, &cfg(2)).unwrap();
        assert_eq!(q.codebooks.len(), 2);
        assert!(q.codebooks.iter().all(|c| c.len() == 4));
        // Four distinct values per channel with four centroids: exact.
        assert_eq!(q.dequantize(), m.values());
    }

    #[test]
    fn identical_channels_identical_codebooks() {
        let row = [0.3f32, -1.2, 0.7, 2.2, 0.1, -0.4, 1.9, 0.0];
        let mut values = row.to_vec();
        values.extend_from_slice(&row);
        let m = WeightMatrix::new("w", 2, 8, values).unwrap();
        let q = quantize_channelwise(&m, &SensitivityMap::uniform(&m), None, &cfg(2)).unwrap();
        assert_eq!(q.codebooks[0], q.codebooks[1]);
        assert_eq!(q.assignment.indices()[..8], q.assignment.indices()[8..]);
    }

    #[test]
    fn grouping_and_mask() {
        let values: Vec<f32> = (0..12).map(|i| i as f32 * 0.5).collect();
        let m = WeightMatrix::new("w", 2, 6, values).unwrap();
        let group = QuantConfig {
            group_size: 3,
            ..cfg(2)
        };
        let q = quantize_channelwise(&m, &SensitivityMap::uniform(&m), None, &group).unwrap();
        assert_eq!(q.codebooks.len(), 4);
        let bad = QuantConfig {
            group_size: 4,
            ..cfg(2)
        };
        assert_eq!(
            quantize_channelwise(&m, &SensitivityMap::uniform(&m), None, &bad),
            Err(Error::GroupSize { group_size: 4, cols: 6 })
        );

        let mut mask = vec![false; 12];
        mask[2] = true;
        let q = quantize_channelwise(&m, &SensitivityMap::uniform(&m), Some(&mask), &cfg(2)).unwrap();
        assert_eq!(q.assignment.indices()[2], MASKED);
        assert!(q.assignment.indices().iter().filter(|&&i| i == MASKED).count() == 1);

        let mut mask = vec![false; 12];
        mask[6..12].iter_mut().for_each(|m| *m = true);
        assert_eq!(
            quantize_channelwise(&m, &SensitivityMap::uniform(&m), Some(&mask), &cfg(2)),
            Err(Error::MaskedChannel { row: 1, group: 0 })
        );
    }

    #[test]
    fn sensitivity_weighting_lowers_weighted_error_on_heavy_tail() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let t = StudentT::new(2.0).unwrap();
        let values: Vec<f32> = (0..64).map(|_| t.sample(&mut rng) as f32).collect();
        let sens_values: Vec<f64> = (0..64)
            .map(|i| if i % 7 == 0 { 50.0 } else { 0.1 + (i % 5) as f64 })
            .collect();
        let m = WeightMatrix::new("w", 1, 64, values.clone()).unwrap();
        let sens = SensitivityMap::new("w", 1, 64, sens_values.clone()).unwrap();

        let weighted = quantize_channelwise(&m, &sens, None, &cfg(3)).unwrap();
        let plain = quantize_channelwise(
            &m,
            &sens,
            None,
            &QuantConfig {
                method: ClusterMethod::Unweighted,
                ..cfg(3)
            },
        )
        .unwrap();
        let obj = |q: &ChannelQuant| {
            weighted_objective(
                &values,
                &sens_values,
                q.codebooks[0].centroids(),
                q.assignment.indices(),
            )
        };
        assert!(obj(&weighted) <= obj(&plain), "{} > {}", obj(&weighted), obj(&plain));
    }

    #[test]
    fn rtn_route() {
        let m = WeightMatrix::new("w", 1, 4, vec![0.0, 0.2, 0.9, 3.0]).unwrap();
        let q = quantize_channelwise(
            &m,
            &SensitivityMap::uniform(&m),
            None,
            &QuantConfig {
                method: ClusterMethod::Rtn,
                ..cfg(2)
            },
        )
        .unwrap();
        assert_eq!(q.codebooks[0].centroids(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(q.assignment.indices(), &[0, 0, 1, 3]);
    }
}
