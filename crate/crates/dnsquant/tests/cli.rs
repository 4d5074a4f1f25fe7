use std::path::Path;
use std::process::{Command, Output};

use dnsquant::io;
use dnsquant_core::kernels::{dense_matvec, fused_dns_matvec, ActivationVector};
use dnsquant_core::toy::{ToyProblem, ToySpec};
use dnsquant_core::ClusterMethod;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dnsquant"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

/// Relative output error of each layer over the first `n` held-out inputs,
/// checking the per-row triangle bound along the way.
fn toy_output_error(d: &Path, bits: &str, n: usize) -> Vec<f64> {
    let out = format!("t{bits}.dnsq");
    ok(
        d,
        &[
            "quantize",
            "--toy",
            "--seed",
            "5",
            "--bits",
            bits,
            "--sensitive-fraction",
            "0",
            "--outlier-fraction",
            "0",
            "-o",
            &out,
        ],
    );
    let layers = io::load_container(&d.join(&out)).unwrap();
    let problem = ToyProblem::generate(&ToySpec::with_seed(5)).unwrap();
    let (in1, in2) = problem.model.layer_inputs(&problem.eval);
    let mut rel = Vec::new();
    for ((layer, w), inputs) in layers.iter().zip(problem.model.layers()).zip([in1, in2]) {
        assert_eq!(layer.sparse.nnz(), 0);
        let q = layer.dequantize();
        let (mut err2, mut norm2) = (0.0, 0.0);
        for input in &inputs[..n] {
            let x = ActivationVector::new(input.iter().map(|&v| v as f32).collect()).unwrap();
            let y = fused_dns_matvec(layer, &x).unwrap();
            let exact = dense_matvec(w, &x).unwrap();
            for r in 0..w.rows() {
                // Each output moves by at most sum |x_j| |w_rj - q_rj|.
                let bound: f64 = (0..w.cols())
                    .map(|c| f64::from(x.values()[c].abs()) * f64::from((w.get(r, c) - q.get(r, c)).abs()))
                    .sum();
                assert!((y[r] - exact[r]).abs() <= bound + 1e-9, "row {r}");
                err2 += (y[r] - exact[r]).powi(2);
                norm2 += exact[r].powi(2);
            }
        }
        rel.push((err2 / norm2).sqrt());
    }
    rel
}

#[test]
fn toy_four_bit_matvec_tracks_full_precision() {
    let dir = tempfile::tempdir().unwrap();
    let four = toy_output_error(dir.path(), "4", 64);
    let three = toy_output_error(dir.path(), "3", 64);
    for (f, t) in four.iter().zip(&three) {
        assert!(f < t, "4-bit {f} vs 3-bit {t}");
    }
}

#[test]
fn rtn_flag_routes_to_uniform_levels() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "generate",
            "heavy-tailed",
            "--rows",
            "8",
            "--cols",
            "64",
            "-o",
            "w.tensor",
        ],
    );
    ok(
        d,
        &[
            "quantize",
            "--weights",
            "w.tensor",
            "--rtn",
            "--sensitive-fraction",
            "0",
            "--outlier-fraction",
            "0",
            "-o",
            "r.dnsq",
        ],
    );
    let l = &io::load_container(&d.join("r.dnsq")).unwrap()[0];
    assert_eq!(l.config.method, ClusterMethod::Rtn);
    for row in 0..8 {
        let lut = l.packed.lut(row, 0);
        let step = lut[1] - lut[0];
        assert!(lut
            .windows(2)
            .all(|p| ((p[1] - p[0]) - step).abs() <= 1e-5 * step.abs().max(1e-6)));
    }
}

#[test]
fn weighted_quantize_without_gradients_is_an_argument_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "generate",
            "heavy-tailed",
            "--rows",
            "4",
            "--cols",
            "16",
            "-o",
            "w.tensor",
        ],
    );
    let out = run(d, &["quantize", "--weights", "w.tensor", "-o", "x.dnsq"]);
    assert_eq!(code(&out), 2);
    assert!(!d.join("x.dnsq").exists());
}

#[test]
fn invalid_fraction_fails_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["quantize", "--toy", "--sensitive-fraction", "0.2", "-o", "x.dnsq"],
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("sensitive_fraction"));
    assert!(!dir.path().join("x.dnsq").exists());
}

#[test]
fn data_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&run(d, &["inspect", "missing.dnsq"])), 3);
    std::fs::write(
        d.join("nan.tensor"),
        dnsquant_core::tensor::encode_raw_f32(1, 2, &[1.0, f32::NAN]),
    )
    .unwrap();
    let out = run(
        d,
        &[
            "quantize",
            "--weights",
            "nan.tensor",
            "--unweighted",
            "--sensitive-fraction",
            "0",
            "-o",
            "x.dnsq",
        ],
    );
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

#[test]
fn corrupted_and_future_containers_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["quantize", "--toy", "--seed", "1", "-o", "m.dnsq"]);
    let mut bytes = std::fs::read(d.join("m.dnsq")).unwrap();
    let clean = bytes.clone();
    bytes[200] ^= 0x10;
    std::fs::write(d.join("bad.dnsq"), &bytes).unwrap();
    let out = run(d, &["inspect", "bad.dnsq"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stdout).contains("MISMATCH"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum mismatch"));
    assert_eq!(code(&run(d, &["matvec", "bad.dnsq"])), 3);

    let mut v99 = clean;
    v99[8..12].copy_from_slice(&99u32.to_le_bytes());
    std::fs::write(d.join("v99.dnsq"), &v99).unwrap();
    let out = run(d, &["inspect", "v99.dnsq"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unsupported container version 99"));
}

#[test]
fn inspect_reports_grouping_and_matches_payload() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &["quantize", "--toy", "--seed", "2", "--group-size", "32", "-o", "g.dnsq"],
    );
    let text = ok(d, &["inspect", "g.dnsq"]);
    let layers = io::load_container(&d.join("g.dnsq")).unwrap();
    assert!(text.contains("checksum"));
    assert!(text.contains(" ok"));
    for l in &layers {
        assert!(text.contains(&format!("layer {}", l.name)));
        assert!(text.contains(&format!("group size 32 (4 per row) lut count {}", l.rows() * 4)));
        assert!(text.contains(&format!("sparse nnz {} ", l.sparse.nnz())));
        assert!(text.contains(&format!("avg_bits {:.4}", l.avg_bits())));
    }
}

#[test]
fn file_pipeline_dequantize_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "toy", "--seed", "4", "-o", "toy"]);
    ok(
        d,
        &[
            "quantize",
            "--weights",
            "toy/fc1.weight.tensor",
            "toy/fc2.weight.tensor",
            "--grads",
            "toy/fc1.weight.grads.tensor",
            "toy/fc2.weight.grads.tensor",
            "-o",
            "m.dnsq",
        ],
    );
    ok(d, &["dequantize", "m.dnsq", "-o", "deq"]);
    let layers = io::load_container(&d.join("m.dnsq")).unwrap();
    for l in &layers {
        let back = io::load_weights(&d.join("deq").join(format!("{}.tensor", l.name))).unwrap();
        assert_eq!(back.values(), l.dequantize().values());
    }
    let one = ok(d, &["matvec", "m.dnsq", "--seed", "9"]);
    let many = ok(d, &["matvec", "m.dnsq", "--seed", "9", "--threads", "7"]);
    assert_eq!(one, many);
    assert_eq!(one.lines().count(), layers[0].rows());

    io::save_vector_f32(&d.join("x.tensor"), &[0.5; 3]).unwrap();
    assert_eq!(code(&run(d, &["matvec", "m.dnsq", "--input", "x.tensor"])), 2);
    assert_eq!(code(&run(d, &["matvec", "m.dnsq", "--layer", "nope"])), 2);
}

#[test]
fn bench_goes_to_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["quantize", "--toy", "--seed", "1", "-o", "m.dnsq"]);
    let out = run(d, &["matvec", "m.dnsq", "--bench", "--runs", "3", "-o", "y.tensor"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("median"));
    assert!(!String::from_utf8_lossy(&out.stdout).contains("median"));
    assert_eq!(io::load_vector(&d.join("y.tensor")).unwrap().len(), 128);
}

#[test]
fn profile_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let text = ok(
        d,
        &[
            "profile",
            "--hardware",
            "a5000",
            "--model",
            "llama-7b",
            "--seq-len",
            "128",
            "-o",
            "p",
        ],
    );
    assert!(text.contains("machine balance 289.06"));
    let layers = std::fs::read_to_string(d.join("p/layers.csv")).unwrap();
    assert!(layers.starts_with("operator,kind,flops,weight_bytes,activation_bytes,intensity,bound,predicted_time_s\n"));
    assert!(layers.contains("\nq_proj,fully-connected,"));
    let runtime = std::fs::read_to_string(d.join("p/runtime.csv")).unwrap();
    assert_eq!(runtime.lines().count(), 1 + 14);
    assert!(runtime.contains("\n16,1.000000000\n"));
    assert_eq!(code(&run(d, &["profile", "--hardware", "h100"])), 3);
}

#[test]
fn config_file_feeds_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("c.toml"),
        "[quant]\nbits = 4\ngroup_size = 64\n\n[toy]\ninput_dim = 64\nhidden_dim = 64\noutput_dim = 16\ngrad_samples = 16\ngrad_batch = 8\neval_samples = 64\n",
    )
    .unwrap();
    ok(d, &["--config", "c.toml", "quantize", "--toy", "-o", "a.dnsq"]);
    ok(
        d,
        &["quantize", "--config", "c.toml", "--toy", "--bits", "2", "-o", "b.dnsq"],
    );
    let a = io::load_container(&d.join("a.dnsq")).unwrap();
    let b = io::load_container(&d.join("b.dnsq")).unwrap();
    assert_eq!((a[0].packed.bits(), a[0].packed.group_len(), a[0].cols()), (4, 64, 64));
    assert_eq!(b[0].packed.bits(), 2);
    std::fs::write(d.join("bad.toml"), "[quant]\nbitz = 4\n").unwrap();
    assert_eq!(code(&run(d, &["--config", "bad.toml", "inspect", "a.dnsq"])), 2);
}

#[test]
fn ablate_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("c.toml"),
        "[toy]\ninput_dim = 64\nhidden_dim = 64\noutput_dim = 16\ngrad_samples = 16\ngrad_batch = 8\neval_samples = 64\n",
    )
    .unwrap();
    let text = ok(
        d,
        &[
            "--config",
            "c.toml",
            "ablate",
            "--suite",
            "sensitivity",
            "--seeds",
            "2",
            "-o",
            "out",
        ],
    );
    assert!(text.contains("rtn/dense"));
    let csv = std::fs::read_to_string(d.join("out/sensitivity.csv")).unwrap();
    assert!(csv.starts_with("config_id,seed,method,sensitivity,bits,sensitive_fraction,outlier_fraction,group_size,weighted_objective,weight_mse,loss_perturbation,avg_bits\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 9);
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("out/sensitivity.json")).unwrap()).unwrap();
    assert_eq!(json["suite"], "sensitivity");
    assert_eq!(json["records"].as_array().unwrap().len(), 18);
    assert_eq!(code(&run(d, &["ablate", "--suite", "nope", "-o", "out"])), 2);
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["--help"])), 0);
    assert_eq!(code(&run(dir.path(), &["frobnicate"])), 2);
    assert_eq!(code(&run(dir.path(), &["quantize", "--toy"])), 2);
}
