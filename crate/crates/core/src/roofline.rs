//! Roofline model of single-batch autoregressive decoding.
//!
//! Two counting conventions sit side by side. Arithmetic intensity divides
//! flops by memory *element* accesses, whatever their width, so a matvec
//! comes out at 2. Predicted time uses bytes: weights at `weight_bits`,
//! activations and the key/value cache at `activation_bits`.
//!
//! A multiply-accumulate is 2 flops. Softmax is charged 5 flops per score
//! (max, subtract, exp, sum, divide); norms 4 per element; rotary 3 per
//! rotated element.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct HardwareProfile {
    pub name: String,
    /// Floating-point operations per second.
    pub peak_flops: f64,
    /// Bytes per second.
    pub mem_bandwidth: f64,
}

impl HardwareProfile {
    pub fn new(name: impl Into<String>, peak_flops: f64, mem_bandwidth: f64) -> Result<Self> {
        let p = Self {
            name: name.into(),
            peak_flops,
            mem_bandwidth,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_flops > 0.0 && self.peak_flops.is_finite()) {
            return Err(Error::InvalidProfile("peak_flops must be positive"));
        }
        if !(self.mem_bandwidth > 0.0 && self.mem_bandwidth.is_finite()) {
            return Err(Error::InvalidProfile("mem_bandwidth must be positive"));
        }
        Ok(())
    }

    /// 222 TFLOP/s, 768 GB/s.
    pub fn a5000() -> Self {
        Self {
            name: "A5000".into(),
            peak_flops: 222e12,
            mem_bandwidth: 768e9,
        }
    }

    /// 309.7 TFLOP/s, 768 GB/s (sparse tensor-core figure, as for the A5000).
    pub fn a6000() -> Self {
        Self {
            name: "A6000".into(),
            peak_flops: 309.7e12,
            mem_bandwidth: 768e9,
        }
    }

    /// Flops the device can do per byte it can move.
    pub fn machine_balance(&self) -> f64 {
        self.peak_flops / self.mem_bandwidth
    }
}

/// Decoder-only transformer dimensions.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ModelShape {
    pub name: String,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub num_heads: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub weight_bits: u8,
    #[cfg_attr(feature = "serde", serde(default = "sixteen"))]
    pub activation_bits: u8,
    /// Gate, up and down projections instead of up and down.
    #[cfg_attr(feature = "serde", serde(default))]
    pub gated_ffn: bool,
}

#[cfg(feature = "serde")]
fn sixteen() -> u8 {
    16
}

impl ModelShape {
    pub fn llama_7b(seq_len: usize) -> Self {
        Self {
            name: "llama-7b".into(),
            num_layers: 32,
            hidden_dim: 4096,
            ffn_dim: 11008,
            num_heads: 32,
            vocab_size: 32000,
            seq_len,
            weight_bits: 16,
            activation_bits: 16,
            gated_ffn: true,
        }
    }

    pub fn with_weight_bits(&self, bits: u8) -> Self {
        Self {
            weight_bits: bits,
            ..self.clone()
        }
    }

    /// `(name, rows, cols)` of the projection matrices in one block.
    pub fn block_linear_shapes(&self) -> Vec<(&'static str, usize, usize)> {
        let (h, f) = (self.hidden_dim, self.ffn_dim);
        let mut out = vec![("q_proj", h, h), ("k_proj", h, h), ("v_proj", h, h), ("o_proj", h, h)];
        if self.gated_ffn {
            out.push(("gate_proj", f, h));
        }
        out.push(("up_proj", f, h));
        out.push(("down_proj", h, f));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.num_layers,
            self.hidden_dim,
            self.ffn_dim,
            self.num_heads,
            self.vocab_size,
            self.seq_len,
        ];
        if dims.contains(&0) {
            return Err(Error::InvalidProfile("model dimensions must be positive"));
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(Error::InvalidProfile("hidden_dim must be a multiple of num_heads"));
        }
        if !(2..=16).contains(&self.weight_bits) {
            return Err(Error::InvalidProfile("weight_bits must be in 2..=16"));
        }
        if self.activation_bits == 0 {
            return Err(Error::InvalidProfile("activation_bits must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    FullyConnected,
    AttentionMatmul,
    Other,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::FullyConnected => "fully-connected",
            Self::AttentionMatmul => "attention-matmul",
            Self::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Memory,
    Compute,
}

/// Cost of one operator, possibly summed over layers and decode steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCost {
    pub name: &'static str,
    pub kind: LayerKind,
    pub flops: u64,
    pub weight_elements: u64,
    pub activation_elements: u64,
    pub weight_bytes: f64,
    pub activation_bytes: f64,
    /// Seconds: `max(flops / peak, bytes / bandwidth)`.
    pub predicted_time: f64,
}

impl LayerCost {
    #[allow(clippy::too_many_arguments)]
    fn new(
        name: &'static str,
        kind: LayerKind,
        flops: u64,
        weights: u64,
        acts: u64,
        shape: &ModelShape,
        hw: &HardwareProfile,
    ) -> Self {
        let weight_bytes = weights as f64 * f64::from(shape.weight_bits) / 8.0;
        let activation_bytes = acts as f64 * f64::from(shape.activation_bits) / 8.0;
        let mut c = Self {
            name,
            kind,
            flops,
            weight_elements: weights,
            activation_elements: acts,
            weight_bytes,
            activation_bytes,
            predicted_time: 0.0,
        };
        c.predicted_time = c.time_on(hw);
        c
    }

    pub fn memory_elements(&self) -> u64 {
        self.weight_elements + self.activation_elements
    }

    pub fn total_bytes(&self) -> f64 {
        self.weight_bytes + self.activation_bytes
    }

    pub fn time_on(&self, hw: &HardwareProfile) -> f64 {
        let compute = self.flops as f64 / hw.peak_flops;
        let memory = self.total_bytes() / hw.mem_bandwidth;
        compute.max(memory)
    }

    pub fn bound(&self, hw: &HardwareProfile) -> Bound {
        if self.flops as f64 / hw.peak_flops > self.total_bytes() / hw.mem_bandwidth {
            Bound::Compute
        } else {
            Bound::Memory
        }
    }

    fn accumulate(&mut self, o: &Self) {
        self.flops += o.flops;
        self.weight_elements += o.weight_elements;
        self.activation_elements += o.activation_elements;
        self.weight_bytes += o.weight_bytes;
        self.activation_bytes += o.activation_bytes;
    }
}

/// Flops per memory element access.
pub fn arithmetic_intensity(cost: &LayerCost) -> Result<f64> {
    let mem = cost.memory_elements();
    if mem == 0 {
        return Err(Error::ZeroMemoryOps);
    }
    if cost.flops == 0 {
        return Err(Error::ZeroFlops);
    }
    Ok(cost.flops as f64 / mem as f64)
}

/// Per-operator costs and their sums.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    /// Decode steps covered.
    pub steps: usize,
    pub layers: Vec<LayerCost>,
    pub total_flops: u64,
    pub total_weight_bytes: f64,
    pub total_activation_bytes: f64,
    pub total_weight_elements: u64,
    pub total_activation_elements: u64,
    pub total_time: f64,
}

impl CostReport {
    fn from_layers(steps: usize, layers: Vec<LayerCost>) -> Self {
        let mut r = Self {
            steps,
            total_flops: 0,
            total_weight_bytes: 0.0,
            total_activation_bytes: 0.0,
            total_weight_elements: 0,
            total_activation_elements: 0,
            total_time: 0.0,
            layers: Vec::new(),
        };
        for l in &layers {
            r.total_flops += l.flops;
            r.total_weight_bytes += l.weight_bytes;
            r.total_activation_bytes += l.activation_bytes;
            r.total_weight_elements += l.weight_elements;
            r.total_activation_elements += l.activation_elements;
            r.total_time += l.predicted_time;
        }
        r.layers = layers;
        r
    }

    /// Weight accesses as a fraction of all memory element accesses.
    pub fn weight_traffic_share(&self) -> f64 {
        self.total_weight_elements as f64 / (self.total_weight_elements + self.total_activation_elements) as f64
    }

    /// Same share measured in bytes at the configured widths.
    pub fn weight_byte_share(&self) -> f64 {
        self.total_weight_bytes / (self.total_weight_bytes + self.total_activation_bytes)
    }

    /// Time spent in fully-connected operators.
    pub fn fully_connected_time_share(&self) -> f64 {
        let fc: f64 = self
            .layers
            .iter()
            .filter(|l| l.kind == LayerKind::FullyConnected)
            .map(|l| l.predicted_time)
            .sum();
        fc / self.total_time
    }
}

/// Costs of one decode step whose new token attends over `context`
/// positions (itself included), summed over all transformer blocks.
pub fn step_costs(shape: &ModelShape, hw: &HardwareProfile, context: usize) -> Result<CostReport> {
    shape.validate()?;
    hw.validate()?;
    if context == 0 {
        return Err(Error::InvalidProfile("context must be at least 1"));
    }
    let l = shape.num_layers as u64;
    let h = shape.hidden_dim as u64;
    let f = shape.ffn_dim as u64;
    let heads = shape.num_heads as u64;
    let v = shape.vocab_size as u64;
    let t = context as u64;
    let fc = |name, m: u64, n: u64| {
        LayerCost::new(
            name,
            LayerKind::FullyConnected,
            l * 2 * m * n,
            l * m * n,
            l * (m + n),
            shape,
            hw,
        )
    };

    let mut rows = Vec::new();
    for name in ["q_proj", "k_proj", "v_proj", "o_proj"] {
        rows.push(fc(name, h, h));
    }
    if shape.gated_ffn {
        rows.push(fc("gate_proj", f, h));
    }
    rows.push(fc("up_proj", f, h));
    rows.push(fc("down_proj", h, f));

    // q . K^T over the cache, then scores . V.
    rows.push(LayerCost::new(
        "attn_score",
        LayerKind::AttentionMatmul,
        l * 2 * t * h,
        0,
        l * (h + t * h + heads * t),
        shape,
        hw,
    ));
    rows.push(LayerCost::new(
        "softmax",
        LayerKind::Other,
        l * 5 * heads * t,
        0,
        l * 2 * heads * t,
        shape,
        hw,
    ));
    rows.push(LayerCost::new(
        "attn_context",
        LayerKind::AttentionMatmul,
        l * 2 * t * h,
        0,
        l * (heads * t + t * h + h),
        shape,
        hw,
    ));

    // Two norms, two residual adds, rotary on q and k, the FFN activation
    // (and gate product when gated).
    let norm = (4 * h, 2 * h);
    let residual = (h, 3 * h);
    let rotary = (3 * 2 * h, 4 * h);
    let act = if shape.gated_ffn {
        (5 * f + f, 2 * f + 3 * f)
    } else {
        (5 * f, 2 * f)
    };
    let other_flops = 2 * norm.0 + 2 * residual.0 + rotary.0 + act.0;
    let other_mem = 2 * norm.1 + 2 * residual.1 + rotary.1 + act.1;
    // Final norm is charged here as well.
    rows.push(LayerCost::new(
        "other",
        LayerKind::Other,
        l * other_flops + norm.0,
        0,
        l * other_mem + norm.1,
        shape,
        hw,
    ));

    rows.push(LayerCost::new(
        "lm_head",
        LayerKind::FullyConnected,
        2 * v * h,
        v * h,
        v + h,
        shape,
        hw,
    ));
    // One embedding row is read per token.
    rows.push(LayerCost::new("embedding", LayerKind::Other, 0, h, h, shape, hw));
    Ok(CostReport::from_layers(1, rows))
}

/// Costs of generating `shape.seq_len` tokens, one decode step each, with
/// the cache growing from 1 to `seq_len` positions. Per-operator rows are
/// summed over steps.
pub fn decode_step_costs(shape: &ModelShape, hw: &HardwareProfile) -> Result<CostReport> {
    let mut acc = step_costs(shape, hw, 1)?.layers;
    for t in 2..=shape.seq_len {
        for (a, s) in acc.iter_mut().zip(step_costs(shape, hw, t)?.layers) {
            a.accumulate(&s);
        }
    }
    for a in &mut acc {
        a.predicted_time = a.time_on(hw);
    }
    Ok(CostReport::from_layers(shape.seq_len, acc))
}

/// Total predicted time at each width, divided by the 16-bit time.
pub fn predicted_runtime_curve(shape: &ModelShape, hw: &HardwareProfile, bits: &[u8]) -> Result<Vec<(u8, f64)>> {
    let base = decode_step_costs(&shape.with_weight_bits(16), hw)?.total_time;
    bits.iter()
        .map(|&b| Ok((b, decode_step_costs(&shape.with_weight_bits(b), hw)?.total_time / base)))
        .collect()
}

/// Least-squares line through `points`: `(slope, intercept, r_squared)`.
/// A perfectly flat series has R² 1.
pub fn affine_fit(points: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    if points.len() < 2 {
        return Err(Error::EmptyInput);
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::EmptyInput);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, intercept, r2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matvec(m: u64, n: u64) -> LayerCost {
        LayerCost {
            name: "fc",
            kind: LayerKind::FullyConnected,
            flops: 2 * m * n,
            weight_elements: m * n,
            activation_elements: 0,
            weight_bytes: (2 * m * n) as f64,
            activation_bytes: 0.0,
            predicted_time: 0.0,
        }
    }

    #[test]
    fn matvec_intensity_is_two() {
        assert_eq!(arithmetic_intensity(&matvec(4096, 4096)).unwrap(), 2.0);
        let mut with_acts = matvec(4096, 4096);
        with_acts.activation_elements = 8192;
        let i = arithmetic_intensity(&with_acts).unwrap();
        assert!(i < 2.0 && i > 1.999);
    }

    #[test]
    fn intensity_guards() {
        let mut c = matvec(0, 0);
        assert_eq!(arithmetic_intensity(&c), Err(Error::ZeroMemoryOps));
        c.weight_elements = 5;
        assert_eq!(arithmetic_intensity(&c), Err(Error::ZeroFlops));
    }

    #[test]
    fn a5000_balance() {
        let b = HardwareProfile::a5000().machine_balance();
        assert!((b - 290.0).abs() / 290.0 < 0.01, "{b}");
    }

    #[test]
    fn bad_profiles() {
        assert!(HardwareProfile::new("x", 0.0, 1.0).is_err());
        assert!(HardwareProfile::new("x", 1.0, f64::NAN).is_err());
        let mut s = ModelShape::llama_7b(128);
        s.weight_bits = 1;
        assert!(s.validate().is_err());
        s.weight_bits = 16;
        s.num_heads = 3;
        assert!(s.validate().is_err());
    }

    #[test]
    fn weight_share_bands() {
        let hw = HardwareProfile::a5000();
        let short = decode_step_costs(&ModelShape::llama_7b(128), &hw)
            .unwrap()
            .weight_traffic_share();
        let long = decode_step_costs(&ModelShape::llama_7b(2048), &hw)
            .unwrap()
            .weight_traffic_share();
        assert!(short >= 0.99, "{short}");
        assert!((0.94..=0.97).contains(&long), "{long}");
    }

    #[test]
    fn totals_are_sums() {
        let r = decode_step_costs(&ModelShape::llama_7b(16), &HardwareProfile::a5000()).unwrap();
        let t: f64 = r.layers.iter().map(|l| l.predicted_time).sum();
        assert_eq!(t, r.total_time);
        assert_eq!(r.layers.iter().map(|l| l.flops).sum::<u64>(), r.total_flops);
        for l in &r.layers {
            assert_eq!(l.predicted_time, l.time_on(&HardwareProfile::a5000()));
        }
    }

    #[test]
    fn doubling_hidden_quadruples_projections() {
        let hw = HardwareProfile::a5000();
        let mut s = ModelShape::llama_7b(8);
        s.ffn_dim = s.hidden_dim;
        let a = step_costs(&s, &hw, 8).unwrap();
        s.hidden_dim *= 2;
        s.ffn_dim *= 2;
        let b = step_costs(&s, &hw, 8).unwrap();
        for name in ["q_proj", "o_proj", "up_proj", "down_proj"] {
            let x = a.layers.iter().find(|l| l.name == name).unwrap();
            let y = b.layers.iter().find(|l| l.name == name).unwrap();
            assert_eq!(y.flops, 4 * x.flops);
            assert_eq!(y.weight_bytes, 4.0 * x.weight_bytes);
        }
    }

    #[test]
    fn runtime_is_affine_in_bits() {
        let hw = HardwareProfile::a5000();
        let bits: Vec<u8> = (3..=16).collect();
        let curve = predicted_runtime_curve(&ModelShape::llama_7b(128), &hw, &bits).unwrap();
        let four = curve.iter().find(|p| p.0 == 4).unwrap().1;
        assert!((0.24..=0.30).contains(&four), "{four}");
        let pts: Vec<_> = curve.iter().map(|&(b, t)| (f64::from(b), t)).collect();
        let (slope, _, r2) = affine_fit(&pts).unwrap();
        assert!(slope > 0.0 && r2 >= 0.999, "{slope} {r2}");
        assert_eq!(curve.last().unwrap().1, 1.0);
    }

    #[test]
    fn compute_bound_is_flat() {
        let hw = HardwareProfile::new("slow", 1e3, 1e12).unwrap();
        let curve = predicted_runtime_curve(&ModelShape::llama_7b(4), &hw, &[3, 8, 16]).unwrap();
        // Only the flop-free embedding read still depends on the width.
        assert!(curve.iter().all(|p| (p.1 - 1.0).abs() < 1e-9));
        let r = step_costs(&ModelShape::llama_7b(4), &hw, 4).unwrap();
        assert_eq!(r.layers[0].bound(&hw), Bound::Compute);
    }

    #[test]
    fn faster_hardware_is_never_slower() {
        let s = ModelShape::llama_7b(64);
        let base = decode_step_costs(&s, &HardwareProfile::a5000()).unwrap().total_time;
        let more_bw = decode_step_costs(&s, &HardwareProfile::new("x", 222e12, 900e9).unwrap())
            .unwrap()
            .total_time;
        let more_flops = decode_step_costs(&s, &HardwareProfile::new("x", 300e12, 768e9).unwrap())
            .unwrap()
            .total_time;
        assert!(more_bw < base);
        assert!(more_flops <= base);
    }
}
