//! Weight-only post-training quantization primitives.
//!
//! This crate holds the pure algorithmic pieces of the toolkit and runs
//! without `std` (it needs `alloc`):
//!
//! - [`sensitivity`]: diagonal Fisher and activation-based importance maps.
//! - [`nuq`]: sensitivity-weighted 1-D k-means codebooks, an exact
//!   dynamic-programming oracle and a uniform round-to-nearest baseline.
//! - [`dns`]: dense-and-sparse decomposition into a compact-range dense
//!   matrix plus a CSR matrix of sensitive values and outliers.
//! - [`packfmt`]: bit-exact index packing and storage accounting.
//! - [`kernels`]: LUT-dequantizing and CSR matrix-vector products.
//! - [`roofline`]: an analytical model of memory-bound decoding.
//! - [`tensor`] and [`container`]: in-memory types and their byte formats.
//! - [`synth`]: seeded synthetic matrices and vectors.
//! - [`toy`]: a two-layer MLP with manual backprop used to produce real
//!   gradients at desk scale.
//!
//! File IO, the command line and timing live in the companion `dnsquant`
//! crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod container;
pub mod dns;
mod error;
pub mod kernels;
mod math;
pub mod nuq;
pub mod packfmt;
pub mod pipeline;
pub mod roofline;
pub mod sensitivity;
pub mod synth;
pub mod tensor;
pub mod toy;

pub use error::{Error, Result};

pub use dns::{CsrMatrix, Decomposition, HybridSplit};
pub use nuq::{AssignmentVector, ClusterMethod, Codebook, QuantConfig};
pub use packfmt::{PackedDense, QuantizedLayer, StorageBreakdown};
pub use sensitivity::{GradientSampleSet, SensitivityMap};
pub use tensor::WeightMatrix;
