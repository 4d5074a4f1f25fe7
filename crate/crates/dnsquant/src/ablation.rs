//! Comparison grids on the toy model: sensitivity weighting, sparsity
//! levels, grouping and Fisher versus activation weighting.

use std::fmt;
use std::str::FromStr;

use dnsquant_core::toy::{quantize_toy, Calibration, SensitivitySource, ToyProblem, ToySpec};
use dnsquant_core::{ClusterMethod, QuantConfig};
use serde::Serialize;

use crate::error::{CliError, CliResult, Context};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Sensitivity,
    Sparsity,
    Grouping,
    ObdObs,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Self::Sensitivity, Self::Sparsity, Self::Grouping, Self::ObdObs];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sensitivity => "sensitivity",
            Self::Sparsity => "sparsity",
            Self::Grouping => "grouping",
            Self::ObdObs => "obd-obs",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Self::ALL.into_iter().find(|x| x.as_str() == s).ok_or_else(|| {
            CliError::Argument(format!(
                "unknown suite {s:?}; expected sensitivity, sparsity, grouping or obd-obs"
            ))
        })
    }
}

/// Sensitive and outlier fractions of the three standard sparsity levels.
pub const LEVELS: [(&str, f64, f64); 3] = [("dense", 0.0, 0.0), ("0.05%", 0.0005, 0.0), ("0.45%", 0.0005, 0.004)];

/// One configuration of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub source: SensitivitySource,
    pub config: QuantConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRecord {
    pub config_id: String,
    pub seed: u64,
    pub method: &'static str,
    pub sensitivity: &'static str,
    pub bits: u8,
    pub sensitive_fraction: f64,
    pub outlier_fraction: f64,
    pub group_size: usize,
    /// Fisher-weighted squared error summed over both layers.
    pub weighted_objective: f64,
    pub weight_mse: f64,
    pub loss_perturbation: f64,
    pub avg_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub suite: Suite,
    pub toy: ToySpec,
    pub records: Vec<AblationRecord>,
}

impl AblationReport {
    /// Records of one seed, in grid order.
    pub fn seed_records(&self, seed: u64) -> Vec<&AblationRecord> {
        self.records.iter().filter(|r| r.seed == seed).collect()
    }

    pub fn find(&self, seed: u64, config_id: &str) -> Option<&AblationRecord> {
        self.records.iter().find(|r| r.seed == seed && r.config_id == config_id)
    }

    pub fn to_csv(&self) -> CliResult<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).map_err(|e| CliError::Internal(format!("csv: {e}")))?;
        }
        w.into_inner().map_err(|e| CliError::Internal(format!("csv: {e}")))
    }

    pub fn to_json(&self) -> CliResult<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self).map_err(|e| CliError::Internal(format!("json: {e}")))?;
        out.push(b'\n');
        Ok(out)
    }
}

fn variant(
    label: impl Into<String>,
    source: SensitivitySource,
    base: &QuantConfig,
    edit: impl FnOnce(&mut QuantConfig),
) -> Variant {
    let mut config = base.clone();
    edit(&mut config);
    Variant {
        label: label.into(),
        source,
        config,
    }
}

/// The configurations a suite compares, in report order.
pub fn grid(suite: Suite, base: &QuantConfig) -> Vec<Variant> {
    use SensitivitySource::{Activation, Fisher};
    let mut out = Vec::new();
    match suite {
        Suite::Sensitivity => {
            for method in [ClusterMethod::Rtn, ClusterMethod::Unweighted, ClusterMethod::Weighted] {
                for (name, s, o) in LEVELS {
                    out.push(variant(format!("{}/{name}", method.as_str()), Fisher, base, |c| {
                        c.method = method;
                        c.sensitive_fraction = s;
                        c.outlier_fraction = o;
                    }));
                }
            }
        }
        Suite::Sparsity => {
            for s in [0.0, 0.00025, 0.0005, 0.001, 0.0015, 0.002] {
                out.push(variant(format!("sensitive/{}%", s * 100.0), Fisher, base, |c| {
                    c.method = ClusterMethod::Weighted;
                    c.sensitive_fraction = s;
                    c.outlier_fraction = 0.0;
                }));
            }
            for o in [0.0, 0.001, 0.002, 0.004, 0.008] {
                out.push(variant(format!("outlier/{}%", o * 100.0), Fisher, base, |c| {
                    c.method = ClusterMethod::Weighted;
                    c.sensitive_fraction = 0.0005;
                    c.outlier_fraction = o;
                }));
            }
        }
        Suite::Grouping => {
            for g in [0, 64, 32, 16] {
                out.push(variant(format!("group/{g}"), Fisher, base, |c| {
                    c.method = ClusterMethod::Weighted;
                    c.sensitive_fraction = 0.0;
                    c.outlier_fraction = 0.0;
                    c.group_size = g;
                }));
            }
            for (name, s, o) in &LEVELS[1..] {
                out.push(variant(format!("dns/{name}"), Fisher, base, |c| {
                    c.method = ClusterMethod::Weighted;
                    c.sensitive_fraction = *s;
                    c.outlier_fraction = *o;
                    c.group_size = 0;
                }));
            }
        }
        Suite::ObdObs => {
            for source in [Fisher, Activation] {
                for (name, s, o) in LEVELS {
                    out.push(variant(format!("{}/{name}", source.as_str()), source, base, |c| {
                        c.method = ClusterMethod::Weighted;
                        c.sensitive_fraction = s;
                        c.outlier_fraction = o;
                    }));
                }
            }
        }
    }
    out
}

fn run_seed(spec: &ToySpec, variants: &[Variant]) -> CliResult<Vec<AblationRecord>> {
    let label = format!("toy seed {}", spec.seed);
    let problem = ToyProblem::generate(spec).context(label.clone())?;
    let calib = Calibration::new(&problem).context(label.clone())?;
    variants
        .iter()
        .map(|v| {
            let out = quantize_toy(&problem, &calib, &v.config, v.source).context(format!("{label}, {}", v.label))?;
            Ok(AblationRecord {
                config_id: v.label.clone(),
                seed: spec.seed,
                method: v.config.method.as_str(),
                sensitivity: v.source.as_str(),
                bits: v.config.bits,
                sensitive_fraction: v.config.sensitive_fraction,
                outlier_fraction: v.config.outlier_fraction,
                group_size: v.config.group_size,
                weighted_objective: out.weighted_objective,
                weight_mse: out.weight_mse,
                loss_perturbation: out.loss_perturbation,
                avg_bits: out.storage.avg_bits(),
            })
        })
        .collect()
}

/// Runs `suite` on toy problems seeded `first_seed..first_seed + seeds`.
/// Seeds run on separate threads; the report is ordered by seed, then grid
/// position, so it does not depend on scheduling.
pub fn run_suite(
    suite: Suite,
    toy: &ToySpec,
    base: &QuantConfig,
    first_seed: u64,
    seeds: usize,
) -> CliResult<AblationReport> {
    base.validate().context("quantization config")?;
    toy.validate().context("toy config")?;
    if seeds == 0 {
        return Err(CliError::Argument("need at least one seed".into()));
    }
    let variants = grid(suite, base);
    for v in &variants {
        v.config.validate().context(v.label.clone())?;
    }
    let per_seed: Vec<CliResult<Vec<AblationRecord>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..seeds as u64)
            .map(|i| {
                let spec = ToySpec {
                    seed: first_seed + i,
                    ..toy.clone()
                };
                let variants = &variants;
                s.spawn(move || run_seed(&spec, variants))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(CliError::Internal("ablation worker panicked".into())))
            })
            .collect()
    });
    let mut records = Vec::new();
    for r in per_seed {
        records.extend(r?);
    }
    Ok(AblationReport {
        suite,
        toy: ToySpec {
            seed: first_seed,
            ..toy.clone()
        },
        records,
    })
}
