//! Reading and writing raw tensors, gradient stacks and containers.

use std::fs;
use std::path::Path;

use dnsquant_core::container;
use dnsquant_core::tensor::{encode_raw_f32, encode_raw_f64, RawTensor};
use dnsquant_core::{GradientSampleSet, QuantizedLayer, WeightMatrix};

use crate::error::{CliError, CliResult, Context};

pub fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(CliError::io(path))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    fs::write(path, bytes).map_err(CliError::io(path))
}

/// Matrix name derived from a file name: `dir/fc1.weight.tensor` → `fc1.weight`.
pub fn stem_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "weights".to_owned())
}

pub fn load_weights(path: &Path) -> CliResult<WeightMatrix> {
    let bytes = read_file(path)?;
    WeightMatrix::from_raw_bytes(stem_name(path), &bytes).context(path.display().to_string())
}

pub fn save_weights(path: &Path, matrix: &WeightMatrix) -> CliResult<()> {
    write_file(path, &matrix.to_raw_bytes())
}

/// Gradient samples are stored as one raw tensor of shape
/// `(num_samples * rows, cols)`, the samples stacked in order.
pub fn load_gradients(path: &Path, target: &WeightMatrix) -> CliResult<GradientSampleSet> {
    let label = path.display().to_string();
    let raw = RawTensor::decode(&read_file(path)?).context(label.clone())?;
    let (rows, cols) = (target.rows(), target.cols());
    if raw.cols != cols || raw.rows % rows != 0 {
        return Err(CliError::Format(format!(
            "{label}: gradient stack {}x{} does not hold whole {rows}x{cols} samples",
            raw.rows, raw.cols
        )));
    }
    let values = raw.into_f32();
    let samples = values.chunks(rows * cols).map(<[f32]>::to_vec).collect();
    GradientSampleSet::new(target.name(), rows, cols, samples).context(label)
}

pub fn save_gradients(path: &Path, grads: &GradientSampleSet) -> CliResult<()> {
    let flat: Vec<f32> = grads.samples().concat();
    write_file(
        path,
        &encode_raw_f32(grads.num_samples() * grads.rows(), grads.cols(), &flat),
    )
}

pub fn save_vector_f32(path: &Path, values: &[f32]) -> CliResult<()> {
    write_file(path, &encode_raw_f32(1, values.len(), values))
}

pub fn save_vector_f64(path: &Path, values: &[f64]) -> CliResult<()> {
    write_file(path, &encode_raw_f64(1, values.len(), values))
}

/// A raw tensor read as a flat vector, whatever its shape.
pub fn load_vector(path: &Path) -> CliResult<Vec<f32>> {
    let raw = RawTensor::decode(&read_file(path)?).context(path.display().to_string())?;
    Ok(raw.into_f32())
}

pub fn save_container(path: &Path, layers: &[QuantizedLayer]) -> CliResult<()> {
    write_file(path, &container::encode(layers))
}

pub fn load_container(path: &Path) -> CliResult<Vec<QuantizedLayer>> {
    container::decode(&read_file(path)?).context(path.display().to_string())
}
