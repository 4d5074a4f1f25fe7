//! Byte-level regression for the container format. Regenerate the file with
//! `DNSQUANT_BLESS=1 cargo test --test golden` only when the format changes
//! on purpose (and bump the version).

use std::path::PathBuf;

use dnsquant_core::container;
use dnsquant_core::dns::{hybrid_split, CsrMatrix};
use dnsquant_core::nuq::MASKED;
use dnsquant_core::packfmt::{pack, PackedDense, QuantizedLayer};
use dnsquant_core::{AssignmentVector, ClusterMethod, QuantConfig};

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/two_layers.dnsq")
}

/// Hand-built layers: no clustering involved, so only the format can move
/// these bytes.
fn layers() -> Vec<QuantizedLayer> {
    let cfg = QuantConfig {
        bits: 2,
        group_size: 2,
        hybrid_top_k: 1,
        method: ClusterMethod::Unweighted,
        ..QuantConfig::default()
    };
    // 2x4, two groups per row; (0, 1) and (1, 3) live in the sparse part.
    let idx = vec![3, MASKED, 1, 2, 0, 1, 2, MASKED];
    let luts = vec![
        -1.0, -0.5, 0.5, 1.0, -2.0, 0.0, 0.25, 2.0, -0.75, -0.25, 0.25, 0.75, -1.5, -0.5, 0.5, 1.5,
    ];
    let payload = pack(&AssignmentVector::new(idx), 2, 2, 4).unwrap();
    let packed = PackedDense::new(2, 2, 4, 2, luts, payload).unwrap();
    // Deltas against entry 0 of each position's table.
    let sparse = CsrMatrix::from_sorted_triplets(2, 4, &[(0, 1, 8.0 - -1.0), (1, 3, -6.5 - -1.5)]).unwrap();
    let hybrid = hybrid_split(&sparse, 1);
    let a = QuantizedLayer::new("blk.0.attn_q", cfg.clone(), packed, sparse, hybrid).unwrap();

    let dense_cfg = QuantConfig {
        bits: 3,
        method: ClusterMethod::Rtn,
        ..QuantConfig::dense_only(3)
    };
    let lut: Vec<f32> = (0..8).map(|i| i as f32 * 0.125 - 0.5).collect();
    let payload = pack(&AssignmentVector::new(vec![1, 2, 3, 7, 0, 5]), 3, 1, 6).unwrap();
    let packed = PackedDense::new(3, 1, 6, 6, lut, payload).unwrap();
    let sparse = CsrMatrix::empty(1, 6);
    let hybrid = hybrid_split(&sparse, dense_cfg.hybrid_top_k);
    let b = QuantizedLayer::new("lm_head", dense_cfg, packed, sparse, hybrid).unwrap();
    vec![a, b]
}

#[test]
fn container_bytes_are_stable() {
    let bytes = container::encode(&layers());
    if std::env::var_os("DNSQUANT_BLESS").is_some() {
        std::fs::write(golden_path(), &bytes).unwrap();
    }
    let golden = std::fs::read(golden_path()).unwrap();
    assert_eq!(bytes, golden, "container encoding changed");
    assert_eq!(container::decode(&golden).unwrap(), layers());
}

#[test]
fn golden_header_fields() {
    let golden = std::fs::read(golden_path()).unwrap();
    assert_eq!(&golden[..8], b"DNSQUANT");
    assert_eq!(u32::from_le_bytes(golden[8..12].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(golden[12..16].try_into().unwrap()), 2);
    let (env, payload) = container::envelope(&golden).unwrap();
    assert!(env.checksum_ok());
    assert_eq!(payload.len() as u64, env.payload_len);
}

#[test]
fn golden_dequantizes_to_known_values() {
    let golden = std::fs::read(golden_path()).unwrap();
    let ls = container::decode(&golden).unwrap();
    assert_eq!(
        ls[0].dequantize().values(),
        &[1.0, 8.0, 0.0, 0.25, -0.75, -0.25, 0.5, -6.5]
    );
    assert_eq!(
        ls[1].dequantize().values(),
        &[-0.375, -0.25, -0.125, 0.375, -0.5, 0.125]
    );
}
