//! The `dnsquant` command line.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dnsquant_core::container;
use dnsquant_core::kernels::ActivationVector;
use dnsquant_core::packfmt::model_storage;
use dnsquant_core::pipeline::quantize_matrix;
use dnsquant_core::roofline::{affine_fit, decode_step_costs, predicted_runtime_curve};
use dnsquant_core::sensitivity::fisher_diagonal;
use dnsquant_core::synth::{heavy_tailed_matrix, uniform_vector};
use dnsquant_core::toy::{quantize_toy, Calibration, SensitivitySource, ToyProblem};
use dnsquant_core::{ClusterMethod, QuantConfig, QuantizedLayer, SensitivityMap};

use crate::ablation::{run_suite, Suite};
use crate::bench::{parallel_fused_matvec, time_matvec};
use crate::config::{load_config, resolve_hardware, resolve_model, FileConfig};
use crate::error::{CliError, CliResult, Context};
use crate::io;

#[derive(Debug, Parser)]
#[command(
    name = "dnsquant",
    version,
    about = "Sensitivity-weighted codebook quantization with dense-and-sparse decomposition"
)]
pub struct Cli {
    /// TOML file with [quant], [toy], [hardware] and [model] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize weight matrices (or the toy model) into a container.
    Quantize(QuantizeArgs),
    /// Write every layer of a container back out as a raw f32 tensor.
    Dequantize {
        container: PathBuf,
        /// Output directory.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Multiply one layer of a container by a vector.
    Matvec(MatvecArgs),
    /// Roofline cost table and normalized runtime against weight width.
    Profile(ProfileArgs),
    /// Run an ablation grid on the toy model.
    Ablate(AblateArgs),
    /// Summarize a container.
    Inspect { container: PathBuf },
    /// Write synthetic inputs.
    #[command(subcommand)]
    Generate(GenerateCommand),
}

#[derive(Debug, Args)]
pub struct QuantArgs {
    #[arg(long)]
    pub bits: Option<u8>,
    #[arg(long)]
    pub sensitive_fraction: Option<f64>,
    #[arg(long)]
    pub outlier_fraction: Option<f64>,
    /// Columns per lookup table; 0 for one table per row.
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub hybrid_top_k: Option<usize>,
    #[arg(long)]
    pub kmeans_iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Uniform round-to-nearest levels instead of k-means.
    #[arg(long, conflicts_with = "unweighted")]
    pub rtn: bool,
    /// k-means that ignores sensitivity.
    #[arg(long)]
    pub unweighted: bool,
}

impl QuantArgs {
    fn apply(&self, mut cfg: QuantConfig) -> CliResult<QuantConfig> {
        if let Some(b) = self.bits {
            cfg.bits = b;
        }
        if let Some(f) = self.sensitive_fraction {
            cfg.sensitive_fraction = f;
        }
        if let Some(f) = self.outlier_fraction {
            cfg.outlier_fraction = f;
        }
        if let Some(g) = self.group_size {
            cfg.group_size = g;
        }
        if let Some(k) = self.hybrid_top_k {
            cfg.hybrid_top_k = k;
        }
        if let Some(i) = self.kmeans_iters {
            cfg.kmeans_max_iters = i;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.rtn {
            cfg.method = ClusterMethod::Rtn;
        } else if self.unweighted {
            cfg.method = ClusterMethod::Unweighted;
        }
        cfg.validate().map_err(|e| CliError::Argument(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// Raw tensor files; the file stem names the layer.
    #[arg(long = "weights", num_args = 1.., required_unless_present = "toy")]
    pub weights: Vec<PathBuf>,
    /// Stacked gradient samples, one file per `--weights` entry, same order.
    #[arg(long = "grads", num_args = 1..)]
    pub grads: Vec<PathBuf>,
    /// Quantize the synthetic two-layer model instead of files.
    #[arg(long, conflicts_with_all = ["weights", "grads"])]
    pub toy: bool,
    #[command(flatten)]
    pub quant: QuantArgs,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct MatvecArgs {
    pub container: PathBuf,
    /// Layer name; defaults to the first layer.
    #[arg(long)]
    pub layer: Option<String>,
    /// Raw tensor holding the input vector; random when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Seed of the random input.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Time the kernel; results go to stderr.
    #[arg(long)]
    pub bench: bool,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    /// Write the result as a raw f64 tensor instead of printing it.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// `a5000`, `a6000` or a TOML file.
    #[arg(long)]
    pub hardware: Option<String>,
    /// `llama-7b` or a TOML file.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Weight width of the per-operator table.
    #[arg(long)]
    pub weight_bits: Option<u8>,
    /// Widths of the runtime curve.
    #[arg(long, value_delimiter = ',', default_value = "3,4,5,6,7,8,9,10,11,12,13,14,15,16")]
    pub bits: Vec<u8>,
    /// Directory for `layers.csv` and `runtime.csv`; stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub suite: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub seeds: usize,
    #[arg(long)]
    pub bits: Option<u8>,
    /// Directory for `<suite>.csv` and `<suite>.json`.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum GenerateCommand {
    /// Toy model weights and stacked gradient samples.
    Toy {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// A Student-t matrix.
    HeavyTailed {
        #[arg(long, default_value_t = 1000)]
        rows: usize,
        #[arg(long, default_value_t = 1000)]
        cols: usize,
        #[arg(long, default_value_t = 3.0)]
        dof: f64,
        #[arg(long, default_value_t = 0.02)]
        scale: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Reports go to stdout, diagnostics to stderr.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| execute(cli)));
    match result {
        Ok(Ok(text)) => {
            let mut out = std::io::stdout().lock();
            if out.write_all(text.as_bytes()).and_then(|_| out.flush()).is_err() {
                return 3;
            }
            0
        }
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            e.code()
        }
        Err(_) => {
            eprintln!("error: internal invariant violated (panic)");
            4
        }
    }
}

/// Runs a parsed command and returns what it prints to stdout.
pub fn execute(cli: Cli) -> CliResult<String> {
    let file = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Quantize(a) => quantize(&file, a),
        Command::Dequantize { container, output } => dequantize(&container, &output),
        Command::Matvec(a) => matvec(a),
        Command::Profile(a) => profile(&file, a),
        Command::Ablate(a) => ablate(&file, a),
        Command::Inspect { container } => inspect(&container),
        Command::Generate(g) => generate(&file, g),
    }
}

fn quantize(file: &FileConfig, a: QuantizeArgs) -> CliResult<String> {
    let cfg = a.quant.apply(file.quant.clone())?;
    let mut out = String::new();
    let layers = if a.toy {
        let mut spec = file.toy.clone();
        if let Some(s) = a.quant.seed {
            spec.seed = s;
        }
        let problem = ToyProblem::generate(&spec).context("toy model")?;
        let calib = Calibration::new(&problem).context("toy calibration")?;
        let outcome = quantize_toy(&problem, &calib, &cfg, SensitivitySource::Fisher).context("toy model")?;
        writeln!(out, "loss perturbation: {:.6e}", outcome.loss_perturbation).unwrap();
        writeln!(out, "weighted objective: {:.6e}", outcome.weighted_objective).unwrap();
        outcome.layers.into()
    } else {
        if !a.grads.is_empty() && a.grads.len() != a.weights.len() {
            return Err(CliError::Argument(format!(
                "{} --grads files for {} --weights files",
                a.grads.len(),
                a.weights.len()
            )));
        }
        let needs_grads = cfg.method == ClusterMethod::Weighted || cfg.sensitive_fraction > 0.0;
        if a.grads.is_empty() && needs_grads {
            return Err(CliError::Argument(
                "weighted clustering and sensitive extraction need --grads (or use --unweighted/--rtn with --sensitive-fraction 0)".into(),
            ));
        }
        let mut layers = Vec::with_capacity(a.weights.len());
        for (i, wp) in a.weights.iter().enumerate() {
            let w = io::load_weights(wp)?;
            let sens = match a.grads.get(i) {
                Some(gp) => fisher_diagonal(&io::load_gradients(gp, &w)?),
                None => SensitivityMap::uniform(&w),
            };
            layers.push(quantize_matrix(&w, &sens, &cfg).context(w.name().to_owned())?);
        }
        layers
    };
    let bytes = container::encode(&layers);
    if container::decode(&bytes).as_ref().ok() != Some(&layers) {
        return Err(CliError::Internal("container does not round-trip".into()));
    }
    io::write_file(&a.output, &bytes)?;
    for l in &layers {
        writeln!(
            out,
            "{}: {}x{} bits {} nnz {} avg_bits {:.4}",
            l.name,
            l.rows(),
            l.cols(),
            l.packed.bits(),
            l.sparse.nnz(),
            l.avg_bits()
        )
        .unwrap();
    }
    let total = model_storage(&layers);
    writeln!(
        out,
        "avg_bits {:.4} compression {:.3}x",
        total.avg_bits(),
        total.compression_rate()
    )
    .unwrap();
    Ok(out)
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn dequantize(path: &Path, dir: &Path) -> CliResult<String> {
    let layers = io::load_container(path)?;
    let mut out = String::new();
    for l in &layers {
        let target = dir.join(format!("{}.tensor", file_safe(&l.name)));
        io::save_weights(&target, &l.dequantize())?;
        writeln!(out, "{} -> {}", l.name, target.display()).unwrap();
    }
    Ok(out)
}

fn pick_layer<'a>(layers: &'a [QuantizedLayer], name: Option<&str>) -> CliResult<&'a QuantizedLayer> {
    match name {
        Some(n) => layers
            .iter()
            .find(|l| l.name == n)
            .ok_or_else(|| CliError::Argument(format!("no layer named {n:?}"))),
        None => layers
            .first()
            .ok_or_else(|| CliError::Format("container has no layers".into())),
    }
}

fn matvec(a: MatvecArgs) -> CliResult<String> {
    if a.threads == 0 {
        return Err(CliError::Argument("--threads must be at least 1".into()));
    }
    let layers = io::load_container(&a.container)?;
    let layer = pick_layer(&layers, a.layer.as_deref())?;
    let values = match &a.input {
        Some(p) => io::load_vector(p)?,
        None => uniform_vector(layer.cols(), a.seed),
    };
    if values.len() != layer.cols() {
        return Err(CliError::Argument(format!(
            "input has {} values, layer {} has {} columns",
            values.len(),
            layer.name,
            layer.cols()
        )));
    }
    let x = ActivationVector::new(values).context("input vector")?;
    let y = parallel_fused_matvec(layer, &x, a.threads).context(layer.name.clone())?;
    if a.bench {
        let t = time_matvec(layer, &x, a.threads, 2, a.runs).context(layer.name.clone())?;
        eprintln!(
            "bench {}: median {} ns, min {} ns over {} runs, {} bytes, {:.3} GB/s",
            layer.name,
            t.median_ns,
            t.min_ns,
            t.runs,
            t.bytes,
            t.throughput() / 1e9
        );
    }
    match &a.output {
        Some(p) => {
            io::save_vector_f64(p, &y)?;
            Ok(format!("{}: {} outputs -> {}\n", layer.name, y.len(), p.display()))
        }
        None => Ok(y.iter().map(|v| format!("{v:e}\n")).collect()),
    }
}

fn profile(file: &FileConfig, a: ProfileArgs) -> CliResult<String> {
    let hw = match &a.hardware {
        Some(s) => resolve_hardware(s)?,
        None => file
            .hardware
            .clone()
            .unwrap_or_else(dnsquant_core::roofline::HardwareProfile::a5000),
    };
    let mut shape = match &a.model {
        Some(s) => resolve_model(s)?,
        None => file
            .model
            .clone()
            .unwrap_or_else(|| dnsquant_core::roofline::ModelShape::llama_7b(128)),
    };
    if let Some(s) = a.seq_len {
        shape.seq_len = s;
    }
    if let Some(b) = a.weight_bits {
        shape.weight_bits = b;
    }
    if a.bits.is_empty() {
        return Err(CliError::Argument("--bits is empty".into()));
    }
    let report = decode_step_costs(&shape, &hw).context("roofline")?;
    let curve = predicted_runtime_curve(&shape, &hw, &a.bits).context("roofline")?;

    let mut layers = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Internal(format!("csv: {e}"));
    layers
        .write_record([
            "operator",
            "kind",
            "flops",
            "weight_bytes",
            "activation_bytes",
            "intensity",
            "bound",
            "predicted_time_s",
        ])
        .map_err(csv_err)?;
    for l in &report.layers {
        let intensity =
            dnsquant_core::roofline::arithmetic_intensity(l).map_or_else(|_| "0".to_owned(), |v| format!("{v:.6}"));
        layers
            .write_record([
                l.name.to_owned(),
                l.kind.as_str().to_owned(),
                l.flops.to_string(),
                format!("{:.1}", l.weight_bytes),
                format!("{:.1}", l.activation_bytes),
                intensity,
                format!("{:?}", l.bound(&hw)).to_lowercase(),
                format!("{:.9e}", l.predicted_time),
            ])
            .map_err(csv_err)?;
    }
    let layers = layers.into_inner().map_err(|e| CliError::Internal(e.to_string()))?;
    let mut runtime = String::from("weight_bits,normalized_runtime\n");
    for (b, t) in &curve {
        writeln!(runtime, "{b},{t:.9}").unwrap();
    }
    let points: Vec<(f64, f64)> = curve.iter().map(|&(b, t)| (f64::from(b), t)).collect();

    let mut out = String::new();
    writeln!(
        out,
        "hardware {}: machine balance {:.2} flop/byte",
        hw.name,
        hw.machine_balance()
    )
    .unwrap();
    writeln!(
        out,
        "model {}: seq_len {} weight_bits {}",
        shape.name, shape.seq_len, shape.weight_bits
    )
    .unwrap();
    writeln!(out, "weight traffic share {:.4}", report.weight_traffic_share()).unwrap();
    writeln!(
        out,
        "fully-connected time share {:.4}",
        report.fully_connected_time_share()
    )
    .unwrap();
    writeln!(out, "predicted generation time {:.6e} s", report.total_time).unwrap();
    if let Ok((slope, intercept, r2)) = affine_fit(&points) {
        writeln!(out, "runtime fit: slope {slope:.6} intercept {intercept:.6} r2 {r2:.6}").unwrap();
    }
    match &a.output {
        Some(dir) => {
            io::write_file(&dir.join("layers.csv"), &layers)?;
            io::write_file(&dir.join("runtime.csv"), runtime.as_bytes())?;
        }
        None => {
            out.push('\n');
            out.push_str(&String::from_utf8_lossy(&layers));
            out.push('\n');
            out.push_str(&runtime);
        }
    }
    Ok(out)
}

fn ablate(file: &FileConfig, a: AblateArgs) -> CliResult<String> {
    let suite: Suite = a.suite.parse()?;
    let mut base = file.quant.clone();
    if let Some(b) = a.bits {
        base.bits = b;
    }
    base.validate().map_err(|e| CliError::Argument(e.to_string()))?;
    let report = run_suite(suite, &file.toy, &base, a.seed, a.seeds)?;
    io::write_file(&a.output.join(format!("{suite}.csv")), &report.to_csv()?)?;
    io::write_file(&a.output.join(format!("{suite}.json")), &report.to_json()?)?;

    // Means over seeds, in grid order.
    let mut out = format!("suite {suite}, {} seeds from {}\n", a.seeds, a.seed);
    writeln!(
        out,
        "{:<24} {:>14} {:>14} {:>10}",
        "config", "loss_pert", "weighted_obj", "avg_bits"
    )
    .unwrap();
    let ids: Vec<&str> = report
        .seed_records(a.seed)
        .iter()
        .map(|r| r.config_id.as_str())
        .collect();
    for id in ids {
        let rs: Vec<_> = report.records.iter().filter(|r| r.config_id == id).collect();
        let n = rs.len() as f64;
        let mean = |f: fn(&crate::ablation::AblationRecord) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
        writeln!(
            out,
            "{:<24} {:>14.6e} {:>14.6e} {:>10.4}",
            id,
            mean(|r| r.loss_perturbation),
            mean(|r| r.weighted_objective),
            mean(|r| r.avg_bits)
        )
        .unwrap();
    }
    Ok(out)
}

fn inspect(path: &Path) -> CliResult<String> {
    let bytes = io::read_file(path)?;
    let (env, _) = container::envelope(&bytes).context(path.display().to_string())?;
    let mut out = String::new();
    writeln!(out, "container {}", path.display()).unwrap();
    writeln!(
        out,
        "version {} layers {} payload {} bytes",
        env.version, env.layer_count, env.payload_len
    )
    .unwrap();
    writeln!(
        out,
        "checksum stored {:#010x} computed {:#010x} {}",
        env.stored_crc,
        env.computed_crc,
        if env.checksum_ok() { "ok" } else { "MISMATCH" }
    )
    .unwrap();
    if !env.checksum_ok() {
        print!("{out}");
        return Err(CliError::Data {
            context: path.display().to_string(),
            source: dnsquant_core::Error::ChecksumMismatch {
                stored: env.stored_crc,
                computed: env.computed_crc,
            },
        });
    }
    let layers = container::decode(&bytes).context(path.display().to_string())?;
    for l in &layers {
        let p = &l.packed;
        let n = (l.rows() * l.cols()) as f64;
        writeln!(out, "layer {}", l.name).unwrap();
        writeln!(
            out,
            "  shape {}x{} bits {} method {}",
            l.rows(),
            l.cols(),
            p.bits(),
            l.config.method.as_str()
        )
        .unwrap();
        writeln!(
            out,
            "  group size {} ({} per row) lut count {}",
            p.group_len(),
            p.groups_per_row(),
            p.lut_count()
        )
        .unwrap();
        writeln!(
            out,
            "  sparse nnz {} ({:.4}%) sensitive {} outlier {}",
            l.sparse.nnz(),
            100.0 * l.sparse.nnz() as f64 / n,
            l.config.sensitive_fraction,
            l.config.outlier_fraction
        )
        .unwrap();
        writeln!(
            out,
            "  hybrid rows {:?} (top_k {})",
            l.hybrid.dense_row_ids, l.hybrid.top_k
        )
        .unwrap();
        writeln!(out, "  avg_bits {:.4}", l.avg_bits()).unwrap();
    }
    let total = model_storage(&layers);
    writeln!(
        out,
        "model avg_bits {:.4} compression {:.3}x",
        total.avg_bits(),
        total.compression_rate()
    )
    .unwrap();
    Ok(out)
}

fn generate(file: &FileConfig, g: GenerateCommand) -> CliResult<String> {
    match g {
        GenerateCommand::Toy { seed, output } => {
            let spec = dnsquant_core::toy::ToySpec {
                seed,
                ..file.toy.clone()
            };
            let problem = ToyProblem::generate(&spec).context("toy model")?;
            let (g1, g2) = problem
                .model
                .gradient_sets(&problem.calib, spec.grad_batch)
                .context("toy gradients")?;
            let mut out = String::new();
            for (w, g) in problem.model.layers().into_iter().zip([g1, g2]) {
                let wp = output.join(format!("{}.tensor", w.name()));
                let gp = output.join(format!("{}.grads.tensor", w.name()));
                io::save_weights(&wp, w)?;
                io::save_gradients(&gp, &g)?;
                writeln!(
                    out,
                    "{} {}x{} ({} gradient samples)",
                    w.name(),
                    w.rows(),
                    w.cols(),
                    g.num_samples()
                )
                .unwrap();
            }
            Ok(out)
        }
        GenerateCommand::HeavyTailed {
            rows,
            cols,
            dof,
            scale,
            seed,
            output,
        } => {
            let w = heavy_tailed_matrix(io::stem_name(&output), rows, cols, dof, scale, seed)
                .map_err(|e| CliError::Argument(e.to_string()))?;
            io::save_weights(&output, &w)?;
            Ok(format!("{} {}x{}\n", w.name(), rows, cols))
        }
    }
}
