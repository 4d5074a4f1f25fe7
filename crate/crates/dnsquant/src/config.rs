//! TOML configuration: quantization settings, toy model, hardware and model shapes.

use std::path::Path;

use dnsquant_core::roofline::{HardwareProfile, ModelShape};
use dnsquant_core::toy::ToySpec;
use dnsquant_core::QuantConfig;
use serde::Deserialize;

use crate::error::{CliError, CliResult};
use crate::io::read_file;

/// Contents of a `--config` file. Every table is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub quant: QuantConfig,
    pub toy: ToySpec,
    pub hardware: Option<HardwareProfile>,
    pub model: Option<ModelShape>,
}

fn parse_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| CliError::Argument(format!("{}: {e}", path.display())))?;
    toml::from_str(text).map_err(|e| CliError::Argument(format!("{}: {e}", path.display())))
}

pub fn load_config(path: Option<&Path>) -> CliResult<FileConfig> {
    match path {
        Some(p) => parse_toml(p),
        None => Ok(FileConfig::default()),
    }
}

/// A built-in name (`a5000`, `a6000`) or a TOML file.
pub fn resolve_hardware(spec: &str) -> CliResult<HardwareProfile> {
    let hw = match spec.to_ascii_lowercase().as_str() {
        "a5000" => HardwareProfile::a5000(),
        "a6000" => HardwareProfile::a6000(),
        _ => parse_toml(Path::new(spec))?,
    };
    hw.validate().map_err(|e| CliError::Argument(format!("{spec}: {e}")))?;
    Ok(hw)
}

/// A built-in name (`llama-7b`) or a TOML file.
pub fn resolve_model(spec: &str) -> CliResult<ModelShape> {
    let shape = match spec.to_ascii_lowercase().as_str() {
        "llama-7b" => ModelShape::llama_7b(128),
        _ => parse_toml(Path::new(spec))?,
    };
    shape
        .validate()
        .map_err(|e| CliError::Argument(format!("{spec}: {e}")))?;
    Ok(shape)
}
