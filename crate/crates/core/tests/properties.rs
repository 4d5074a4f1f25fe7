use dnsquant_core::container;
use dnsquant_core::dns::{decompose, decompose_with_counts};
use dnsquant_core::kernels::{fused_dns_matvec, reference_matvec, ActivationVector};
use dnsquant_core::nuq::{dp_kmeans_oracle, weighted_kmeans_1d};
use dnsquant_core::packfmt::{pack, unpack};
use dnsquant_core::pipeline::quantize_matrix;
use dnsquant_core::{AssignmentVector, ClusterMethod, Error, QuantConfig, SensitivityMap, WeightMatrix};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f32> {
    prop_oneof![
        8 => -4.0f32..4.0,
        1 => -1e4f32..1e4,
        1 => Just(0.0f32),
    ]
}

/// Matrix, sensitivity values and whether the matrix is constant.
fn matrix_and_sens() -> impl Strategy<Value = (WeightMatrix, SensitivityMap)> {
    prop_oneof![
        Just((1usize, 1usize)),
        (1usize..2, 1usize..30),
        (1usize..30, 1usize..2),
        (1usize..12, 1usize..24),
    ]
    .prop_flat_map(|(rows, cols)| {
        let n = rows * cols;
        (
            prop_oneof![
                proptest::collection::vec(finite(), n),
                finite().prop_map(move |c| vec![c; n]),
            ],
            proptest::collection::vec(0.0f64..10.0, n),
        )
            .prop_map(move |(v, s)| {
                (
                    WeightMatrix::new("m", rows, cols, v).unwrap(),
                    SensitivityMap::new("m", rows, cols, s).unwrap(),
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn decomposition_is_lossless((w, s) in matrix_and_sens(), a in 0usize..4, b in 0usize..4) {
        let n = w.len();
        let (a, b) = if a + b >= n { (0, 0) } else { (a, b) };
        let d = decompose_with_counts(&w, &s, a, b).unwrap();
        let back = d.reconstruct();
        prop_assert!(back.values().iter().zip(w.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert_eq!(d.sparse.nnz(), a + b);
    }

    #[test]
    fn fractional_decomposition_is_lossless((w, s) in matrix_and_sens(), level in 0usize..3) {
        let (sf, of) = [(0.0, 0.0), (0.0005, 0.0), (0.0005, 0.004)][level];
        let cfg = QuantConfig { sensitive_fraction: sf, outlier_fraction: of, ..QuantConfig::default() };
        match decompose(&w, &s, &cfg) {
            Ok(d) => prop_assert_eq!(d.reconstruct(), w),
            Err(Error::SparseBudget { .. }) => prop_assert!(w.len() <= 2),
            Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
        }
    }

    #[test]
    fn unpack_inverts_pack((bits, rows, cols, idx) in (2u8..=8, 1usize..6, 1usize..50).prop_flat_map(|(bits, rows, cols)| {
        (Just(bits), Just(rows), Just(cols), proptest::collection::vec(0..(1u16 << bits), rows * cols))
    })) {
        let a = AssignmentVector::new(idx);
        let bytes = pack(&a, bits, rows, cols).unwrap();
        prop_assert_eq!(bytes.len(), rows * (cols * bits as usize).div_ceil(8));
        prop_assert_eq!(unpack(&bytes, bits, rows, cols, true).unwrap(), a);
    }

    #[test]
    fn weighted_kmeans_never_beats_the_oracle(
        data in proptest::collection::vec((-10.0f32..10.0, 0.0f64..5.0), 1..64),
        k in prop_oneof![Just(2usize), Just(4), Just(8)],
    ) {
        let (v, w): (Vec<f32>, Vec<f64>) = data.into_iter().unzip();
        prop_assume!(w.iter().sum::<f64>() > 0.0);
        let fit = weighted_kmeans_1d(&v, &w, k, &QuantConfig::default().kmeans_params()).unwrap();
        let opt = dp_kmeans_oracle(&v, &w, k).unwrap();
        prop_assert!(fit.objective >= opt.objective * (1.0 - 1e-9) - 1e-12);
    }
}

fn layer_case() -> impl Strategy<Value = (WeightMatrix, SensitivityMap, QuantConfig)> {
    (
        matrix_and_sens(),
        2u8..=8,
        0usize..3,
        0usize..3,
        0usize..4,
        prop_oneof![
            Just(ClusterMethod::Weighted),
            Just(ClusterMethod::Unweighted),
            Just(ClusterMethod::Rtn)
        ],
    )
        .prop_map(|((w, s), bits, level, group, top_k, method)| {
            let (sf, of) = [(0.0, 0.0), (0.0005, 0.0), (0.0005, 0.004)][level];
            let cols = w.cols();
            let group_size = [0, cols, if cols % 2 == 0 { cols / 2 } else { 0 }][group];
            let cfg = QuantConfig {
                bits,
                sensitive_fraction: sf,
                outlier_fraction: of,
                group_size,
                hybrid_top_k: top_k,
                method,
                ..QuantConfig::default()
            };
            (w, s, cfg)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn container_round_trip_is_exact(cases in proptest::collection::vec(layer_case(), 1..3)) {
        let mut layers = Vec::new();
        for (w, s, cfg) in cases {
            match quantize_matrix(&w, &s, &cfg) {
                Ok(l) => layers.push(l),
                Err(Error::SparseBudget { .. } | Error::MaskedChannel { .. }) => {}
                Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
            }
        }
        let bytes = container::encode(&layers);
        let back = container::decode(&bytes).unwrap();
        prop_assert_eq!(&back, &layers);
        prop_assert_eq!(container::encode(&back), bytes);
    }

    #[test]
    fn fused_matches_reference_bit_for_bit((w, s, cfg) in layer_case(), xs in proptest::collection::vec(-2.0f32..2.0, 30)) {
        let Ok(layer) = quantize_matrix(&w, &s, &cfg) else { return Ok(()) };
        let x = ActivationVector::new(xs[..w.cols()].to_vec()).unwrap();
        let a = fused_dns_matvec(&layer, &x).unwrap();
        let b = reference_matvec(&layer, &x).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn golden_three_bit_bytes() {
    let a = AssignmentVector::new(vec![1, 2, 3]);
    assert_eq!(pack(&a, 3, 1, 3).unwrap(), vec![0xD1, 0x00]);
}
