//! Files, command line and timing around [`dnsquant_core`].
//!
//! - [`io`]: raw tensors, gradient stacks and containers on disk.
//! - [`config`]: TOML settings, hardware profiles and model shapes.
//! - [`ablation`]: comparison grids on the toy model.
//! - [`bench`]: threaded fused matvec and its timing.
//! - [`cli`]: the `dnsquant` binary.

pub mod ablation;
pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;

pub use error::{CliError, CliResult};
