//! End-to-end quantization of one matrix.

use alloc::vec::Vec;

use crate::dns::{decompose, hybrid_split, Decomposition};
use crate::nuq::{quantize_channelwise, ChannelQuant};
use crate::packfmt::{pack, PackedDense, QuantizedLayer, MAX_COLS};
use crate::sensitivity::fisher_diagonal;
use crate::{Error, GradientSampleSet, QuantConfig, Result, SensitivityMap, WeightMatrix};

/// Intermediate results, kept for reporting.
#[derive(Debug, Clone)]
pub struct QuantizeOutcome {
    pub layer: QuantizedLayer,
    pub decomposition: Decomposition,
    pub channels: ChannelQuant,
}

/// Decompose, cluster each channel, pack, and store sparse values as
/// deltas against index 0 of their channel's LUT.
pub fn quantize_matrix(matrix: &WeightMatrix, sens: &SensitivityMap, cfg: &QuantConfig) -> Result<QuantizedLayer> {
    quantize_matrix_detailed(matrix, sens, cfg).map(|o| o.layer)
}

pub fn quantize_matrix_detailed(
    matrix: &WeightMatrix,
    sens: &SensitivityMap,
    cfg: &QuantConfig,
) -> Result<QuantizeOutcome> {
    cfg.validate()?;
    sens.check_matches(matrix)?;
    if matrix.cols() >= MAX_COLS {
        return Err(Error::InvalidLayer(alloc::format!(
            "{}: {} columns exceed the 16-bit index limit",
            matrix.name(),
            matrix.cols()
        )));
    }
    let decomposition = decompose(matrix, sens, cfg)?;
    let channels = quantize_channelwise(&decomposition.dense, sens, Some(&decomposition.mask), cfg)?;
    let (rows, cols) = (matrix.rows(), matrix.cols());
    let luts: Vec<f32> = channels
        .codebooks
        .iter()
        .flat_map(|c| c.centroids().iter().copied())
        .collect();
    let payload = pack(&channels.assignment, cfg.bits, rows, cols)?;
    let packed = PackedDense::new(cfg.bits, rows, cols, channels.group_len, luts, payload)?;
    let sparse = decomposition
        .sparse
        .map_values(|r, c, v| v - packed.lut(r, c / packed.group_len())[0]);
    let hybrid = hybrid_split(&sparse, cfg.hybrid_top_k);
    let layer = QuantizedLayer::new(matrix.name(), cfg.clone(), packed, sparse, hybrid)?;
    Ok(QuantizeOutcome {
        layer,
        decomposition,
        channels,
    })
}

/// As [`quantize_matrix`], with sensitivity from the diagonal Fisher of
/// `grads`.
pub fn quantize_with_gradients(
    matrix: &WeightMatrix,
    grads: &GradientSampleSet,
    cfg: &QuantConfig,
) -> Result<QuantizedLayer> {
    let sens = fisher_diagonal(grads);
    quantize_matrix(matrix, &sens, cfg)
}
