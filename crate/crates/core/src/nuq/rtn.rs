use alloc::vec::Vec;

use super::{AssignmentVector, Codebook};
use crate::math::floor;
use crate::{Error, Result};

/// Uniform round-to-nearest: `2^bits` evenly spaced levels from the minimum
/// to the maximum value. Halfway values round up to the higher level.
pub fn rtn_uniform(values: &[f32], bits: u8) -> Result<(Codebook, AssignmentVector)> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(1..=8).contains(&bits) {
        return Err(Error::InvalidConfig(alloc::format!(
            "bits must be in 1..=8, got {bits}"
        )));
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { index });
    }
    let levels = 1usize << bits;
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let (lo64, hi64) = (f64::from(lo), f64::from(hi));
    let step = (hi64 - lo64) / (levels - 1) as f64;

    let mut table: Vec<f32> = (0..levels).map(|i| (lo64 + i as f64 * step) as f32).collect();
    table[levels - 1] = hi;

    let indices = values
        .iter()
        .map(|&v| {
            if step == 0.0 {
                return 0;
            }
            let idx = floor((f64::from(v) - lo64) / step + 0.5);
            (idx.max(0.0) as usize).min(levels - 1) as u16
        })
        .collect();
    Ok((Codebook::new(bits, table)?, AssignmentVector::new(indices)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_bit_grid_on_unit_interval() {
        let (cb, a) = rtn_uniform(&[0.0, 1.0], 2).unwrap();
        assert_eq!(
            cb.centroids(),
            &[0.0, (1.0f64 / 3.0) as f32, (2.0f64 / 3.0) as f32, 1.0]
        );
        assert_eq!(a.indices(), &[0, 3]);
    }

    #[test]
    fn constant_input_has_zero_error() {
        let (cb, a) = rtn_uniform(&[1.5; 5], 3).unwrap();
        assert!(cb.centroids().iter().all(|&c| c == 1.5));
        assert!(a.indices().iter().all(|&i| cb.centroids()[usize::from(i)] == 1.5));
    }

    #[test]
    fn halfway_rounds_up() {
        let (cb, a) = rtn_uniform(&[0.0, 0.5, 1.0], 1).unwrap();
        assert_eq!(cb.centroids(), &[0.0, 1.0]);
        assert_eq!(a.indices(), &[0, 1, 1]);
    }

    #[test]
    fn empty_input_rejected() {
        assert_eq!(rtn_uniform(&[], 3), Err(Error::EmptyInput));
        assert!(rtn_uniform(&[0.0; 3], 0).is_err());
    }
}
