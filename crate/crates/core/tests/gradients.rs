use gsd_core::data::EmbeddingBatch;
use gsd_core::model::{loss_and_grads, Architecture, EncoderKind, HeadKind, Model, TrainConfig};
use gsd_core::rng::GsdRng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
/// Components smaller than this are compared absolutely.
const FLOOR: f64 = 1e-6;

struct Case {
    model: Model,
    batch: EmbeddingBatch,
    cfg: TrainConfig,
}

fn random_case(seed: u64) -> Case {
    let mut rng = GsdRng::new(seed);
    let kinds = [EncoderKind::Identity, EncoderKind::Linear, EncoderKind::Mlp1];
    let encoder = kinds[(seed % 3) as usize];
    let head_kind = if (seed / 3).is_multiple_of(2) { HeadKind::Gsd } else { HeadKind::Vanilla };
    let input_dim = 1 + rng.index(8);
    let feature_dim = if encoder == EncoderKind::Identity { input_dim } else { 1 + rng.index(8) };
    let num_classes = 2 + rng.index(3);
    let arch = Architecture {
        encoder,
        input_dim,
        hidden_dim: 1 + rng.index(8),
        feature_dim,
        num_classes,
    };
    let mut model = Model::init(arch, head_kind, seed).unwrap();
    model.head.alpha = rng.uniform_range(0.5, 2.0);
    model.head.beta = rng.uniform_range(-1.0, 1.0);
    let n = 1 + rng.index(6);
    let features: Vec<f32> = (0..n * input_dim).map(|_| (2.0 * rng.gaussian()) as f32).collect();
    let labels: Vec<u32> = (0..n).map(|_| rng.index(num_classes) as u32).collect();
    let batch = EmbeddingBatch::new(features, input_dim, labels, num_classes).unwrap();
    let cfg = TrainConfig {
        weight_decay: rng.uniform_range(0.0, 0.1),
        lambda_alpha: rng.uniform_range(0.0, 2.0),
        ..TrainConfig::default()
    };
    Case { model, batch, cfg }
}

fn loss_at(case: &Case, params: &[f64]) -> f64 {
    let mut m = case.model.clone();
    m.set_flat_params(params).unwrap();
    loss_and_grads(&m, &case.batch, &case.cfg).unwrap().0
}

#[test]
fn analytic_gradients_match_central_differences() {
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for seed in 0..150u64 {
        let case = random_case(seed);
        let (_, grads) = loss_and_grads(&case.model, &case.batch, &case.cfg).unwrap();
        let analytic = grads.flat();
        let params = case.model.flat_params();
        let trainable_scalars = case.model.head_kind == HeadKind::Gsd;
        let n = params.len();
        for k in 0..n {
            if !trainable_scalars && k >= n - 2 {
                assert_eq!(analytic[k], 0.0);
                continue;
            }
            let mut p = params.clone();
            p[k] = params[k] + STEP;
            let up = loss_at(&case, &p);
            p[k] = params[k] - STEP;
            let down = loss_at(&case, &p);
            let numeric = (up - down) / (2.0 * STEP);
            let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
            assert!(
                rel < TOL,
                "seed {seed} param {k}/{n}: analytic {} numeric {numeric} rel {rel}",
                analytic[k]
            );
            checked += 1;
        }
    }
    eprintln!("checked {checked} components, worst relative error {worst:e}");
}

#[test]
fn alpha_penalty_gradient_vanishes_at_one() {
    let mut case = random_case(0);
    assert_eq!(case.model.head_kind, HeadKind::Gsd);
    case.model.head.alpha = 1.0;
    let base = TrainConfig {
        weight_decay: 0.0,
        lambda_alpha: 0.0,
        ..case.cfg.clone()
    };
    let with_penalty = TrainConfig {
        lambda_alpha: 5.0,
        ..base.clone()
    };
    let (_, g0) = loss_and_grads(&case.model, &case.batch, &base).unwrap();
    let (_, g1) = loss_and_grads(&case.model, &case.batch, &with_penalty).unwrap();
    assert_eq!(g0.alpha, g1.alpha);
}

#[test]
fn uniform_predictions_give_ln2() {
    // zero-logit head via orthogonal inputs: w rows span e1, inputs along e2
    let encoder = gsd_core::model::Encoder::identity(2);
    let head = gsd_core::model::GeometricHead::new(gsd_core::Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]])).unwrap();
    let model = Model::new(encoder, head, HeadKind::Gsd).unwrap();
    let batch = EmbeddingBatch::new(vec![0.0, 1.0, 0.0, 2.0], 2, vec![0, 1], 2).unwrap();
    let cfg = TrainConfig {
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let (loss, _) = loss_and_grads(&model, &batch, &cfg).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
}
