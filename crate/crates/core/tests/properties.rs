use gsd_core::calibration::{CalibrationConfig, CalibrationMode, Provenance};
use gsd_core::data::{decode_embeddings, encode_embeddings, EmbeddingBatch};
use gsd_core::geometry::{
    compute_c, effective_norm_nonlinear, exact_expansion, DecompositionInputs, NonlinearMapParams,
};
use gsd_core::linalg::{argmax, dot, softmax};
use gsd_core::metrics::{auroc, brier, ece, nll, BinningSpec};
use gsd_core::model::{
    decode_model, encode_model, forward_gsd, forward_vanilla, Architecture, EncoderKind, GeometricHead, HeadKind,
    Model, NormMode,
};
use gsd_core::Matrix;
use proptest::prelude::*;

fn unit_interval_rows(n: usize, k: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(prop::collection::vec(0.01f64..1.0, k), n).prop_map(|rows| {
        let normalized: Vec<Vec<f64>> = rows
            .into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            })
            .collect();
        Matrix::from_rows(&normalized)
    })
}

fn probs_and_labels() -> impl Strategy<Value = (Matrix, Vec<u32>)> {
    (1usize..12, 2usize..5).prop_flat_map(|(n, k)| (unit_interval_rows(n, k), prop::collection::vec(0..k as u32, n)))
}

fn nonzero_vec(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, d).prop_filter("nonzero", |v| dot(v, v) > 1e-6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn expansion_is_exact(
        delta_norm in 0.0f64..10.0,
        c_x in 0.0f64..10.0,
        c_phi in 0.0f64..1.5,
        frac in 0.0f64..1.0,
    ) {
        let delta_phi = c_phi + frac * (1.5 - c_phi);
        let d = DecompositionInputs::new(delta_norm, c_x, delta_phi, c_phi).unwrap();
        let e = exact_expansion(&d);
        prop_assert!((e.lhs - e.rhs).abs() <= 1e-12 * e.lhs.abs().max(1e-300) + 1e-15, "{e:?}");
    }

    #[test]
    fn compute_c_round_trips(mu in 0.5f64..20.0, frac in 0.0f64..0.95, error in 1e-6f64..0.999) {
        let sigma = frac * mu;
        let c = compute_c(mu, sigma, error).unwrap();
        let back = (-c * (mu - sigma)).exp();
        prop_assert!((back - (1.0 - error)).abs() < 1e-12);
    }

    #[test]
    fn nonlinear_map_is_increasing(
        alpha in 0.2f64..4.0, beta_prime in 0.0f64..5.0, c in 0.01f64..3.0,
        a in 0.0f64..50.0, gap in 1e-3f64..10.0,
    ) {
        let p = NonlinearMapParams::new(alpha, beta_prime, c).unwrap();
        let lo = effective_norm_nonlinear(a, &p).unwrap();
        let hi = effective_norm_nonlinear(a + gap, &p).unwrap();
        prop_assert!(hi > lo);
        prop_assert_eq!(effective_norm_nonlinear(0.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn positive_norm_preserves_argmax(
        w in prop::collection::vec(nonzero_vec(3), 4),
        x in nonzero_vec(3),
        alpha in 0.1f64..5.0,
        beta in -1.0f64..5.0,
    ) {
        let weights = Matrix::from_rows(&w);
        let head = GeometricHead::with_scalars(weights.clone(), alpha, beta).unwrap();
        let out = forward_gsd(&head, &x, NormMode::Affine).unwrap();
        prop_assume!(out.effective_norm > 1e-9);
        let plain = forward_vanilla(&weights, &x).unwrap();
        // near-ties can flip under rounding
        let mut sorted = plain.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        prop_assume!(sorted[0] - sorted[1] > 1e-9 * sorted[0].abs().max(1.0));
        prop_assert_eq!(argmax(&out.logits), argmax(&plain));
    }

    #[test]
    fn temperature_preserves_argmax(logits in prop::collection::vec(-20.0f64..20.0, 2..6), t in 1e-2f64..100.0) {
        let scaled: Vec<f64> = logits.iter().map(|l| l / t).collect();
        prop_assert_eq!(argmax(&softmax(&scaled)), argmax(&logits));
    }

    #[test]
    fn metric_ranges((probs, labels) in probs_and_labels(), bins in 1usize..20) {
        let spec = BinningSpec::new(bins).unwrap();
        let e = ece(&probs, &labels, spec).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!(nll(&probs, &labels).unwrap() >= 0.0);
        let b = brier(&probs, &labels, probs.cols()).unwrap();
        prop_assert!((0.0..=2.0).contains(&b));
    }

    #[test]
    fn auroc_is_antisymmetric_and_rank_based(
        pos in prop::collection::vec(-3.0f64..3.0, 1..10),
        neg in prop::collection::vec(-3.0f64..3.0, 1..10),
    ) {
        let a = auroc(&pos, &neg).unwrap();
        let b = auroc(&neg, &pos).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
        let tp: Vec<f64> = pos.iter().map(|v| v.exp()).collect();
        let tn: Vec<f64> = neg.iter().map(|v| v.exp()).collect();
        prop_assert!((auroc(&tp, &tn).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn gsde_round_trip(n in 0usize..6, d in 1usize..5, k in 1usize..4, seed in any::<u64>()) {
        let mut rng = gsd_core::rng::GsdRng::new(seed);
        let features: Vec<f32> = (0..n * d).map(|_| rng.gaussian() as f32).collect();
        let labels: Vec<u32> = (0..n).map(|_| rng.index(k) as u32).collect();
        let batch = EmbeddingBatch::new(features, d, labels, k).unwrap();
        let bytes = encode_embeddings(&batch);
        let back = decode_embeddings(&bytes).unwrap();
        prop_assert_eq!(encode_embeddings(&back), bytes);
        prop_assert_eq!(back, batch);
    }

    #[test]
    fn checkpoint_round_trip(
        kind in prop_oneof![Just(EncoderKind::Identity), Just(EncoderKind::Linear), Just(EncoderKind::Mlp1)],
        gsd in any::<bool>(),
        input_dim in 1usize..5,
        seed in any::<u64>(),
        beta in -2.0f64..2.0,
    ) {
        let arch = Architecture { encoder: kind, input_dim, hidden_dim: 3, feature_dim: 2, num_classes: 3 };
        let head_kind = if gsd { HeadKind::Gsd } else { HeadKind::Vanilla };
        let mut model = Model::init(arch, head_kind, seed).unwrap();
        model.head.beta = beta;
        let bytes = encode_model(&model);
        let back = decode_model(&bytes).unwrap();
        prop_assert_eq!(encode_model(&back), bytes);
        prop_assert_eq!(back.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        model.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn calibration_config_round_trip(
        beta_prime in -5.0f64..5.0, c in 1e-3f64..3.0, mu in 1.0f64..5.0, sigma in 0.0f64..0.9, nonlinear in any::<bool>(),
    ) {
        let mode = if nonlinear { CalibrationMode::Nonlinear { beta_prime, c } } else { CalibrationMode::AffineBeta(beta_prime) };
        let cfg = CalibrationConfig {
            mode,
            mu_x: Some(mu),
            sigma_x: Some(sigma),
            error: 0.1,
            provenance: Provenance::GridSearched,
        };
        let back = CalibrationConfig::from_text(&cfg.to_text()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
