//! A two-layer MLP with hand-written backprop, used as a small but real
//! model to measure what quantization does to a loss.
//!
//! Logits `y = W2 tanh(W1 x)`, no biases, softmax cross-entropy against a
//! target distribution. Weights are heavy tailed (Student-t), input
//! features have log-uniform scales and heavy-tailed values, so some hidden
//! units saturate and prediction confidence varies from input to input.
//!
//! The model is its own teacher: calibration labels are sampled from its
//! predictive distribution and held-out targets are that distribution
//! itself. The weights therefore minimize the expected loss, squared
//! per-sample gradients estimate the true Fisher, and the held-out loss
//! increase of a perturbed model is its mean KL divergence from the
//! original.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StudentT};

use crate::math::{sqrt, tanh};
use crate::pipeline::quantize_matrix;
use crate::sensitivity::{activation_sensitivity, fisher_diagonal};
use crate::{
    Error, GradientSampleSet, QuantConfig, QuantizedLayer, Result, SensitivityMap, StorageBreakdown, WeightMatrix,
};

pub const FC1: &str = "fc1.weight";
pub const FC2: &str = "fc2.weight";

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ToySpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    /// Samples used for gradients and activation statistics.
    /// Gradient samples; each is the summed gradient of a batch.
    pub grad_samples: usize,
    /// Examples per gradient sample, like tokens in a calibration sequence.
    pub grad_batch: usize,
    /// Held-out samples for the loss.
    pub eval_samples: usize,
    /// Multiplies the second-layer weights; larger means more confident
    /// predictions.
    pub logit_scale: f64,
    /// Student-t degrees of freedom for the weights.
    pub weight_dof: f64,
    /// Student-t degrees of freedom for input values.
    pub input_dof: f64,
    /// Input feature scales are drawn log-uniformly from this range.
    pub input_scale: (f64, f64),
    /// Multiplies the first-layer weights; larger means more saturation.
    pub gain: f64,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            input_dim: 128,
            hidden_dim: 128,
            output_dim: 32,
            grad_samples: 512,
            grad_batch: 64,
            eval_samples: 1024,
            logit_scale: 2.0,
            weight_dof: 4.0,
            input_dof: 4.0,
            input_scale: (0.1, 3.0),
            gain: 1.5,
            seed: 0,
        }
    }
}

impl ToySpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    // Negated comparisons so that NaN fails validation.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if [self.input_dim, self.hidden_dim, self.output_dim].contains(&0) {
            return Err(Error::InvalidConfig("toy dimensions must be positive".into()));
        }
        if self.grad_samples == 0 || self.grad_batch == 0 || self.eval_samples == 0 {
            return Err(Error::EmptySampleSet);
        }
        let positive = [
            self.logit_scale,
            self.weight_dof,
            self.input_dof,
            self.input_scale.0,
            self.gain,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || !(self.input_scale.1 >= self.input_scale.0) {
            return Err(Error::InvalidConfig(
                "toy logit scale, tails, scales and gain must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Inputs with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub out: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub w1: WeightMatrix,
    pub w2: WeightMatrix,
}

fn log_sum_exp(y: &[f64]) -> f64 {
    let m = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(y.iter().map(|&v| libm::exp(v - m)).sum())
}

fn softmax(y: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(y);
    y.iter().map(|&v| libm::exp(v - lse)).collect()
}

fn matvec(w: &WeightMatrix, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|r| w.row(r).iter().zip(x).map(|(&a, &b)| f64::from(a) * b).sum())
        .collect()
}

impl ToyModel {
    pub fn new(w1: WeightMatrix, w2: WeightMatrix) -> Result<Self> {
        if w2.cols() != w1.rows() {
            return Err(Error::ShapeMismatch {
                expected_rows: w2.rows(),
                expected_cols: w1.rows(),
                rows: w2.rows(),
                cols: w2.cols(),
            });
        }
        Ok(Self { w1, w2 })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn layers(&self) -> [&WeightMatrix; 2] {
        [&self.w1, &self.w2]
    }

    /// Same architecture with replacement weights.
    pub fn with_weights(&self, w1: WeightMatrix, w2: WeightMatrix) -> Result<Self> {
        w1.check_shape(self.w1.rows(), self.w1.cols())?;
        w2.check_shape(self.w2.rows(), self.w2.cols())?;
        Self::new(w1, w2)
    }

    pub fn forward(&self, x: &[f64]) -> Forward {
        let pre = matvec(&self.w1, x);
        let hidden: Vec<f64> = pre.iter().map(|&a| tanh(a)).collect();
        let out = matvec(&self.w2, &hidden);
        Forward { pre, hidden, out }
    }

    /// Predictive distribution for `x`.
    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.forward(x).out)
    }

    /// Cross-entropy of the prediction against target distribution `t`.
    pub fn sample_loss(&self, x: &[f64], t: &[f64]) -> f64 {
        let y = self.forward(x).out;
        let lse = log_sum_exp(&y);
        y.iter()
            .zip(t)
            .filter(|(_, &t)| t != 0.0)
            .map(|(&y, &t)| t * (lse - y))
            .sum()
    }

    /// Mean loss over `data`.
    pub fn loss(&self, data: &Dataset) -> f64 {
        let total: f64 = data
            .inputs
            .iter()
            .zip(&data.targets)
            .map(|(x, t)| self.sample_loss(x, t))
            .sum();
        total / data.len() as f64
    }

    /// Gradient of one sample's loss with respect to `W1` and `W2`,
    /// row-major.
    pub fn sample_gradients(&self, x: &[f64], t: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let f = self.forward(x);
        let dy: Vec<f64> = softmax(&f.out).iter().zip(t).map(|(p, t)| p - t).collect();
        let (h, o) = (self.w1.rows(), self.w2.rows());
        let mut g2 = Vec::with_capacity(o * h);
        for &d in &dy {
            g2.extend(f.hidden.iter().map(|&v| d * v));
        }
        let mut dpre = vec![0.0; h];
        for (j, dp) in dpre.iter_mut().enumerate() {
            let back: f64 = (0..o).map(|k| dy[k] * f64::from(self.w2.get(k, j))).sum();
            *dp = back * (1.0 - f.hidden[j] * f.hidden[j]);
        }
        let mut g1 = Vec::with_capacity(h * x.len());
        for &d in &dpre {
            g1.extend(x.iter().map(|&v| d * v));
        }
        (g1, g2)
    }

    /// Gradient samples over `data`, one set per layer. Consecutive runs of
    /// `batch` examples are summed into one sample; a trailing partial
    /// batch is dropped.
    pub fn gradient_sets(&self, data: &Dataset, batch: usize) -> Result<(GradientSampleSet, GradientSampleSet)> {
        if batch == 0 {
            return Err(Error::EmptySampleSet);
        }
        let count = data.len() / batch;
        let mut s1 = Vec::with_capacity(count);
        let mut s2 = Vec::with_capacity(count);
        for (xs, ts) in data.inputs.chunks_exact(batch).zip(data.targets.chunks_exact(batch)) {
            let mut a1 = vec![0.0f64; self.w1.len()];
            let mut a2 = vec![0.0f64; self.w2.len()];
            for (x, t) in xs.iter().zip(ts) {
                let (g1, g2) = self.sample_gradients(x, t);
                a1.iter_mut().zip(&g1).for_each(|(a, g)| *a += g);
                a2.iter_mut().zip(&g2).for_each(|(a, g)| *a += g);
            }
            s1.push(a1.into_iter().map(|v| v as f32).collect());
            s2.push(a2.into_iter().map(|v| v as f32).collect());
        }
        Ok((
            GradientSampleSet::new(self.w1.name(), self.w1.rows(), self.w1.cols(), s1)?,
            GradientSampleSet::new(self.w2.name(), self.w2.rows(), self.w2.cols(), s2)?,
        ))
    }

    /// The input each layer sees, per sample.
    pub fn layer_inputs(&self, data: &Dataset) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let hidden = data.inputs.iter().map(|x| self.forward(x).hidden).collect();
        (data.inputs.clone(), hidden)
    }
}

/// The class whose cumulative probability first exceeds `u`.
fn one_hot(p: &[f64], u: f64) -> Vec<f64> {
    let mut cum = 0.0;
    let mut pick = p.len() - 1;
    for (i, &v) in p.iter().enumerate() {
        cum += v;
        if u < cum {
            pick = i;
            break;
        }
    }
    let mut t = vec![0.0; p.len()];
    t[pick] = 1.0;
    t
}

/// A generated model with calibration and held-out data.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyProblem {
    pub spec: ToySpec,
    pub model: ToyModel,
    pub calib: Dataset,
    pub eval: Dataset,
}

impl ToyProblem {
    pub fn generate(spec: &ToySpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let wt = StudentT::new(spec.weight_dof).map_err(|_| Error::InvalidConfig("weight_dof".into()))?;
        let xt = StudentT::new(spec.input_dof).map_err(|_| Error::InvalidConfig("input_dof".into()))?;

        let (n, h, o) = (spec.input_dim, spec.hidden_dim, spec.output_dim);
        let (lo, hi) = (libm::log(spec.input_scale.0), libm::log(spec.input_scale.1));
        let scales: Vec<f64> = (0..n).map(|_| libm::exp(rng.random_range(lo..=hi))).collect();
        // Keep pre-activations around unit size given the feature scales.
        let rms_in = sqrt(scales.iter().map(|s| s * s).sum::<f64>());
        let draw = |count: usize, scale: f64, rng: &mut ChaCha8Rng| -> Vec<f32> {
            (0..count).map(|_| (wt.sample(rng) * scale) as f32).collect()
        };
        let w1 = draw(n * h, spec.gain / rms_in, &mut rng);
        let w2 = draw(h * o, spec.logit_scale / sqrt(h as f64), &mut rng);
        let model = ToyModel::new(WeightMatrix::new(FC1, h, n, w1)?, WeightMatrix::new(FC2, o, h, w2)?)?;

        let dataset = |count: usize, sampled: bool, rng: &mut ChaCha8Rng| {
            let mut inputs = Vec::with_capacity(count);
            let mut targets = Vec::with_capacity(count);
            for _ in 0..count {
                let x: Vec<f64> = scales.iter().map(|s| s * xt.sample(rng)).collect();
                let p = model.probabilities(&x);
                let t = if sampled { one_hot(&p, rng.random::<f64>()) } else { p };
                inputs.push(x);
                targets.push(t);
            }
            Dataset { inputs, targets }
        };
        let calib = dataset(spec.grad_samples * spec.grad_batch, true, &mut rng);
        let eval = dataset(spec.eval_samples, false, &mut rng);
        Ok(Self {
            spec: spec.clone(),
            model,
            calib,
            eval,
        })
    }

    /// Held-out loss increase when the weights are replaced.
    pub fn loss_perturbation(&self, w1: &WeightMatrix, w2: &WeightMatrix) -> Result<f64> {
        let q = self.model.with_weights(w1.clone(), w2.clone())?;
        Ok(q.loss(&self.eval) - self.model.loss(&self.eval))
    }
}

/// Where per-weight importance comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensitivitySource {
    /// Diagonal Fisher of the final loss.
    Fisher,
    /// Mean squared layer input, the layer-output reconstruction view.
    Activation,
}

impl SensitivitySource {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fisher => "fisher",
            Self::Activation => "activation",
        }
    }
}

/// Sensitivities and metrics for both layers of a problem, computed once.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub fisher: [SensitivityMap; 2],
    pub activation: [SensitivityMap; 2],
}

impl Calibration {
    pub fn new(problem: &ToyProblem) -> Result<Self> {
        let m = &problem.model;
        let (g1, g2) = m.gradient_sets(&problem.calib, problem.spec.grad_batch)?;
        let (a1, a2) = m.layer_inputs(&problem.calib);
        Ok(Self {
            fisher: [fisher_diagonal(&g1), fisher_diagonal(&g2)],
            activation: [
                activation_sensitivity(m.w1.name(), m.w1.rows(), &a1)?,
                activation_sensitivity(m.w2.name(), m.w2.rows(), &a2)?,
            ],
        })
    }

    pub fn source(&self, source: SensitivitySource) -> &[SensitivityMap; 2] {
        match source {
            SensitivitySource::Fisher => &self.fisher,
            SensitivitySource::Activation => &self.activation,
        }
    }
}

/// Result of quantizing both layers of a toy problem.
#[derive(Debug, Clone)]
pub struct ToyOutcome {
    pub layers: [QuantizedLayer; 2],
    /// Held-out loss increase.
    pub loss_perturbation: f64,
    /// `sum F_i (w_i - q_i)^2` over both layers, `F` the Fisher diagonal.
    pub weighted_objective: f64,
    /// Mean squared weight error over both layers.
    pub weight_mse: f64,
    pub storage: StorageBreakdown,
}

/// `sum s_i (a_i - b_i)^2`.
pub fn weighted_error(a: &WeightMatrix, b: &WeightMatrix, sens: &SensitivityMap) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .zip(sens.values())
        .map(|((&x, &y), &s)| {
            let d = f64::from(x) - f64::from(y);
            s * d * d
        })
        .sum()
}

/// Quantizes both layers with `cfg`, using `source` for extraction and
/// clustering weights, and measures the effect.
pub fn quantize_toy(
    problem: &ToyProblem,
    calib: &Calibration,
    cfg: &QuantConfig,
    source: SensitivitySource,
) -> Result<ToyOutcome> {
    let m = &problem.model;
    let sens = calib.source(source);
    let l1 = quantize_matrix(&m.w1, &sens[0], cfg)?;
    let l2 = quantize_matrix(&m.w2, &sens[1], cfg)?;
    let (q1, q2) = (l1.dequantize(), l2.dequantize());
    let weighted_objective =
        weighted_error(&m.w1, &q1, &calib.fisher[0]) + weighted_error(&m.w2, &q2, &calib.fisher[1]);
    let ones = |w: &WeightMatrix| SensitivityMap::uniform(w);
    let sq = weighted_error(&m.w1, &q1, &ones(&m.w1)) + weighted_error(&m.w2, &q2, &ones(&m.w2));
    let weight_mse = sq / (m.w1.len() + m.w2.len()) as f64;
    Ok(ToyOutcome {
        loss_perturbation: problem.loss_perturbation(&q1, &q2)?,
        weighted_objective,
        weight_mse,
        storage: l1.storage() + l2.storage(),
        layers: [l1, l2],
    })
}
