use gsd_core::calibration::{
    calibrate_temperature, calibrate_two_step, grid_search_beta, optimize_beta_nll, TwoStepOptions,
};
use gsd_core::data::{gen_clusters, ClusterSpec, EmbeddingBatch};
use gsd_core::metrics::{ece, nll, BinningSpec};
use gsd_core::model::{train, Architecture, EncoderKind, HeadKind, Inference, Model, NormMode, Schedule, TrainConfig};

fn clusters(separation: f64, per_class: usize, seed: u64) -> EmbeddingBatch {
    gen_clusters(&ClusterSpec::axis_aligned(2, 2, separation, 1.0, per_class, seed).unwrap()).unwrap()
}

fn linear_model(kind: HeadKind, seed: u64) -> Model {
    let arch = Architecture {
        encoder: EncoderKind::Linear,
        input_dim: 2,
        hidden_dim: 0,
        feature_dim: 2,
        num_classes: 2,
    };
    Model::init(arch, kind, seed).unwrap()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        ..TrainConfig::default()
    }
}

#[test]
fn separable_clusters_are_learned() {
    let data = clusters(6.0, 200, 1);
    for kind in [HeadKind::Vanilla, HeadKind::Gsd] {
        let (trained, history) = train(&linear_model(kind, 2), &data, &config(50)).unwrap();
        let last = history.records.last().unwrap();
        assert!(last.accuracy >= 0.99, "{kind:?}: {last:?}");
        assert!(last.mean_cosine > history.records[0].mean_cosine, "{kind:?}");
        let preds = trained.predict(&data, Inference::Plain).unwrap();
        let hits = preds.predicted.iter().zip(data.labels()).filter(|(p, l)| **p == **l as usize).count();
        assert!(hits as f64 / data.len() as f64 >= 0.99);
    }
}

#[test]
fn zero_epochs_is_a_no_op() {
    let data = clusters(6.0, 10, 1);
    let model = linear_model(HeadKind::Gsd, 3);
    let (trained, history) = train(&model, &data, &config(0)).unwrap();
    assert_eq!(trained, model);
    assert!(history.records.is_empty());
}

#[test]
fn training_is_deterministic() {
    let data = clusters(3.0, 50, 4);
    let model = linear_model(HeadKind::Gsd, 5);
    let (a, ha) = train(&model, &data, &config(10)).unwrap();
    let (b, hb) = train(&model, &data, &config(10)).unwrap();
    assert_eq!(gsd_core::model::encode_model(&a), gsd_core::model::encode_model(&b));
    assert_eq!(ha.to_tsv(), hb.to_tsv());
}

#[test]
fn strong_alpha_penalty_pins_alpha() {
    let data = clusters(3.0, 100, 6);
    let cfg = TrainConfig {
        lambda_alpha: 1e3,
        learning_rate: 1e-3,
        ..config(30)
    };
    let (trained, _) = train(&linear_model(HeadKind::Gsd, 7), &data, &cfg).unwrap();
    assert!((trained.head.alpha - 1.0).abs() < 0.05, "alpha {}", trained.head.alpha);
}

#[test]
fn divergence_is_reported() {
    let data = clusters(3.0, 20, 8);
    let cfg = TrainConfig {
        learning_rate: 1e12,
        schedule: Schedule::Constant,
        ..config(20)
    };
    let err = train(&linear_model(HeadKind::Gsd, 9), &data, &cfg).unwrap_err();
    assert!(matches!(err, gsd_core::GsdError::Divergence(_)), "{err}");
}

/// Long unregularized training on overlapping clusters.
fn overconfident() -> (Model, EmbeddingBatch) {
    let train_set = clusters(1.5, 100, 10);
    let val = clusters(1.5, 200, 11);
    let cfg = TrainConfig {
        weight_decay: 0.0,
        ..config(300)
    };
    let arch = Architecture {
        encoder: EncoderKind::Mlp1,
        input_dim: 2,
        hidden_dim: 32,
        feature_dim: 8,
        num_classes: 2,
    };
    let (m, _) = train(&Model::init(arch, HeadKind::Gsd, 12).unwrap(), &train_set, &cfg).unwrap();
    (m, val)
}

#[test]
fn offset_calibration_improves_the_overconfident_model() {
    let (model, val) = overconfident();
    let spec = BinningSpec::default();
    let before = model.predict(&val, Inference::Plain).unwrap();
    let ece_before = ece(&before.probs, val.labels(), spec).unwrap();
    let nll_before = nll(&before.probs, val.labels()).unwrap();

    let grid: Vec<f64> = (-100..=100).map(|k| model.head.beta + 0.1 * k as f64).collect();
    let out = grid_search_beta(&model, &val, &grid, spec).unwrap();
    assert!(out.ece < ece_before, "{} vs {ece_before}", out.ece);

    let b = optimize_beta_nll(&model, &val, 10).unwrap();
    let after = model.predict(&val, Inference::Norm(NormMode::AffineOffset(b))).unwrap();
    assert!(nll(&after.probs, val.labels()).unwrap() <= nll_before);
}

#[test]
fn calibration_edge_cases() {
    let (model, val) = overconfident();
    let spec = BinningSpec::default();
    let candidate = model.head.beta + 0.25;
    let single = grid_search_beta(&model, &val, &[candidate], spec).unwrap();
    assert_eq!(single.beta_prime, candidate);
    let own = grid_search_beta(&model, &val, &[model.head.beta], spec).unwrap();
    assert_eq!(own.beta_prime, model.head.beta);
    assert_eq!(optimize_beta_nll(&model, &val, 0).unwrap(), model.head.beta);

    let out = calibrate_two_step(&model, &val, TwoStepOptions::default()).unwrap();
    for cfg in [&out.affine, &out.nonlinear] {
        let before = model.predict(&val, Inference::Plain).unwrap();
        let after = model.predict(&val, cfg.inference()).unwrap();
        for i in 0..val.len() {
            if before.effective_norms[i] > 0.0 && after.effective_norms[i] > 0.0 {
                assert_eq!(before.predicted[i], after.predicted[i]);
            }
        }
    }
    assert!(calibrate_temperature(&model, &val, 50).is_ok());
}
