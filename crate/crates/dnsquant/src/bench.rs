//! Threaded fused matvec and wall-clock timing.

use std::time::Instant;

use dnsquant_core::kernels::{fused_dns_rows, ActivationVector};
use dnsquant_core::{QuantizedLayer, Result};

/// Fused dense-and-sparse matvec with rows split across `threads` workers.
/// Every row is computed by the same code as the serial kernel, so the
/// result does not depend on the thread count.
pub fn parallel_fused_matvec(layer: &QuantizedLayer, x: &ActivationVector, threads: usize) -> Result<Vec<f64>> {
    let rows = layer.rows();
    let mut out = vec![0.0f64; rows];
    let threads = threads.clamp(1, rows);
    let chunk = rows.div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = out
            .chunks_mut(chunk)
            .enumerate()
            .map(|(i, slot)| {
                let start = i * chunk;
                s.spawn(move || fused_dns_rows(layer, x, start..start + slot.len(), slot))
            })
            .collect();
        handles
            .into_iter()
            .try_for_each(|h| h.join().expect("matvec worker panicked"))
    })?;
    Ok(out)
}

/// Bytes a single matvec reads and writes: packed indices, tables, the
/// sparse arrays at stored widths, the input and the output.
pub fn bytes_touched(layer: &QuantizedLayer) -> u64 {
    let p = &layer.packed;
    let s = &layer.sparse;
    let dense = p.payload().len() + p.luts().len() * 4;
    let sparse = s.row_ptr().len() * 4 + s.nnz() * (2 + 4);
    let io = layer.cols() * 4 + layer.rows() * 8;
    (dense + sparse + io) as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub runs: usize,
    pub median_ns: u64,
    pub min_ns: u64,
    pub bytes: u64,
}

impl Timing {
    /// Bytes per second implied by the median.
    pub fn throughput(&self) -> f64 {
        self.bytes as f64 / (self.median_ns.max(1) as f64 * 1e-9)
    }
}

/// Median of `runs` (at least 3) timed calls after `warmup` untimed ones.
pub fn time_matvec(
    layer: &QuantizedLayer,
    x: &ActivationVector,
    threads: usize,
    warmup: usize,
    runs: usize,
) -> Result<Timing> {
    let runs = runs.max(3);
    for _ in 0..warmup {
        std::hint::black_box(parallel_fused_matvec(layer, x, threads)?);
    }
    let mut samples = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        std::hint::black_box(parallel_fused_matvec(layer, x, threads)?);
        samples.push(t.elapsed().as_nanos() as u64);
    }
    samples.sort_unstable();
    Ok(Timing {
        runs,
        median_ns: samples[runs / 2],
        min_ns: samples[0],
        bytes: bytes_touched(layer),
    })
}
