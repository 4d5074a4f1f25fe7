//! Non-uniform quantization: per-channel codebooks built by 1-D k-means.
//!
//! The weighted objective is `sum_i f_i * (w_i - q(w_i))^2` where `f_i` is a
//! per-weight sensitivity. With uniform `f_i` it reduces to ordinary k-means,
//! and [`rtn_uniform`] gives the evenly spaced round-to-nearest baseline.

mod channel;
mod kmeans;
pub mod oracle;
mod rtn;

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

pub use channel::{quantize_channelwise, ChannelQuant};
pub use kmeans::{kmeans_1d, weighted_kmeans_1d, weighted_objective, KMeansFit, KMeansParams};
pub use oracle::{dp_kmeans_oracle, OracleFit, ORACLE_MAX_N};
pub use rtn::rtn_uniform;

/// Index reserved for positions that were moved into the sparse part.
/// The packer stores these as index 0.
pub const MASKED: u16 = u16::MAX;

/// How each channel's centroids are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ClusterMethod {
    /// Sensitivity-weighted k-means.
    Weighted,
    /// Plain k-means, every weight counts the same.
    Unweighted,
    /// Evenly spaced levels over the channel range.
    Rtn,
}

impl ClusterMethod {
    pub fn code(self) -> u8 {
        match self {
            Self::Weighted => 0,
            Self::Unweighted => 1,
            Self::Rtn => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Weighted),
            1 => Some(Self::Unweighted),
            2 => Some(Self::Rtn),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Weighted => "weighted",
            Self::Unweighted => "unweighted",
            Self::Rtn => "rtn",
        }
    }
}

/// Quantization settings shared by decomposition, clustering and packing.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct QuantConfig {
    pub bits: u8,
    /// Fraction of weights kept exactly because they are the most sensitive.
    pub sensitive_fraction: f64,
    /// Fraction of the remaining weights kept exactly because of magnitude.
    pub outlier_fraction: f64,
    /// Columns per lookup table; 0 means one table per output channel.
    pub group_size: usize,
    pub kmeans_max_iters: usize,
    /// Stop once the largest centroid move is below this fraction of the value range.
    pub kmeans_tol: f64,
    pub seed: u64,
    /// Sparse rows with the most non-zeros processed as dense rows.
    pub hybrid_top_k: usize,
    pub method: ClusterMethod,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            bits: 3,
            sensitive_fraction: 0.0005,
            outlier_fraction: 0.004,
            group_size: 0,
            kmeans_max_iters: 100,
            kmeans_tol: 1e-6,
            seed: 0,
            hybrid_top_k: 10,
            method: ClusterMethod::Weighted,
        }
    }
}

/// Upper bound for either sparse fraction.
pub const MAX_FRACTION: f64 = 0.05;

impl QuantConfig {
    pub fn dense_only(bits: u8) -> Self {
        Self {
            bits,
            sensitive_fraction: 0.0,
            outlier_fraction: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=8).contains(&self.bits) {
            return Err(Error::InvalidConfig(format!(
                "bits must be in 2..=8, got {}",
                self.bits
            )));
        }
        for (name, f) in [
            ("sensitive_fraction", self.sensitive_fraction),
            ("outlier_fraction", self.outlier_fraction),
        ] {
            if !(0.0..=MAX_FRACTION).contains(&f) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be in [0, {MAX_FRACTION}], got {f}"
                )));
            }
        }
        if self.kmeans_max_iters == 0 {
            return Err(Error::InvalidConfig("kmeans_max_iters must be at least 1".into()));
        }
        if !(self.kmeans_tol >= 0.0 && self.kmeans_tol.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "kmeans_tol must be finite and non-negative, got {}",
                self.kmeans_tol
            )));
        }
        Ok(())
    }

    /// Columns per lookup table for a matrix with `cols` columns.
    pub fn group_len(&self, cols: usize) -> Result<usize> {
        match self.group_size {
            0 => Ok(cols),
            g if cols.is_multiple_of(g) => Ok(g),
            g => Err(Error::GroupSize { group_size: g, cols }),
        }
    }

    pub fn kmeans_params(&self) -> KMeansParams {
        KMeansParams {
            max_iters: self.kmeans_max_iters,
            tol: self.kmeans_tol,
            zero_weight_fallback: true,
        }
    }
}

/// Centroid lookup table for one channel or group, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    bits: u8,
    centroids: Vec<f32>,
}

impl Codebook {
    pub fn new(bits: u8, centroids: Vec<f32>) -> Result<Self> {
        if !(1..=8).contains(&bits) {
            return Err(Error::InvalidConfig(format!(
                "codebook bits must be in 1..=8, got {bits}"
            )));
        }
        let k = 1usize << bits;
        if centroids.len() != k {
            return Err(Error::LengthMismatch {
                expected: k,
                actual: centroids.len(),
            });
        }
        if let Some(index) = centroids.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        if centroids.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig("codebook must be sorted ascending".into()));
        }
        Ok(Self { bits, centroids })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn is_strictly_sorted(&self) -> bool {
        self.centroids.windows(2).all(|w| w[0] < w[1])
    }
}

/// Codebook index per weight; [`MASKED`] marks sparse-extracted positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentVector {
    indices: Vec<u16>,
}

impl AssignmentVector {
    pub fn new(indices: Vec<u16>) -> Self {
        Self { indices }
    }

    pub fn indices(&self) -> &[u16] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Fails if any non-sentinel index does not fit in `bits`.
    pub fn check_bits(&self, bits: u8) -> Result<()> {
        let limit = 1u32 << bits;
        match self.indices.iter().find(|&&i| i != MASKED && u32::from(i) >= limit) {
            Some(&index) => Err(Error::IndexOverflow { index, bits }),
            None => Ok(()),
        }
    }
}

impl From<Vec<u16>> for AssignmentVector {
    fn from(indices: Vec<u16>) -> Self {
        Self::new(indices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(QuantConfig::default().validate().is_ok());
        let bad = QuantConfig {
            outlier_fraction: 0.2,
            ..QuantConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        let bad = QuantConfig {
            bits: 9,
            ..QuantConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = QuantConfig {
            kmeans_tol: f64::NAN,
            ..QuantConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn group_len_must_divide() {
        let cfg = QuantConfig {
            group_size: 3,
            ..QuantConfig::default()
        };
        assert_eq!(cfg.group_len(9), Ok(3));
        assert_eq!(cfg.group_len(8), Err(Error::GroupSize { group_size: 3, cols: 8 }));
        assert_eq!(QuantConfig::default().group_len(8), Ok(8));
    }

    #[test]
    fn codebook_invariants() {
        assert!(Codebook::new(2, alloc::vec![0.0, 1.0, 2.0, 3.0])
            .unwrap()
            .is_strictly_sorted());
        assert!(Codebook::new(2, alloc::vec![0.0, 1.0, 2.0]).is_err());
        assert!(Codebook::new(2, alloc::vec![0.0, 2.0, 1.0, 3.0]).is_err());
        assert!(Codebook::new(1, alloc::vec![0.0, f32::NAN]).is_err());
    }

    #[test]
    fn assignment_bit_check_ignores_sentinel() {
        let a = AssignmentVector::new(alloc::vec![0, 7, MASKED]);
        assert!(a.check_bits(3).is_ok());
        assert_eq!(a.check_bits(2), Err(Error::IndexOverflow { index: 7, bits: 2 }));
    }
}
