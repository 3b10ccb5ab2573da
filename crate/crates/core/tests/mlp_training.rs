use cmf_core::regressor::{gradient_check_with_step, train, FeatureLayout, FeatureVector, MlpModel, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn layout(n: usize) -> FeatureLayout {
    FeatureLayout {
        semantic_dim: n - 2,
        encoded_dim: 0,
        year_means: [0.0, 0.0],
    }
}

fn vector(values: Vec<f64>) -> FeatureVector {
    let n = values.len();
    FeatureVector {
        values,
        semantic_dim: n - 2,
        encoded_dim: 0,
    }
}

/// 50 samples with a linear target well inside the output range.
fn linear_fixture() -> (Vec<FeatureVector>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    (0..50)
        .map(|_| {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = 1.0 + 0.3 * x[0] - 0.2 * x[1] + 0.1 * x[2];
            (vector(x), y)
        })
        .unzip()
}

#[test]
fn fits_a_linear_target() {
    let (xs, ys) = linear_fixture();
    let config = TrainConfig {
        hidden_widths: vec![16, 8],
        learning_rate: 1e-2,
        epochs: 500,
        batch_size: 8,
        patience: 0,
        validation_fraction: 0.0,
        ..Default::default()
    };
    let (model, report) = train(&layout(4), &xs, &ys, &config).unwrap();
    let preds = model.predict_values(&xs.iter().map(|v| v.values.clone()).collect::<Vec<_>>()).unwrap();
    let mae = preds.iter().zip(&ys).map(|(p, y)| (p - y).abs()).sum::<f64>() / ys.len() as f64;
    assert!(mae <= 0.02, "training MAE {mae}");
    assert!(report.final_loss < 1e-3);
}

#[test]
fn memorizes_a_repeated_sample() {
    let x = vector(vec![0.4, -1.2, 3.0]);
    let xs = vec![x.clone(); 100];
    let ys = vec![0.7; 100];
    let config = TrainConfig {
        hidden_widths: vec![8],
        learning_rate: 1e-2,
        epochs: 200,
        patience: 0,
        ..Default::default()
    };
    let (model, _) = train(&layout(3), &xs, &ys, &config).unwrap();
    assert!((model.predict(&x).unwrap() - 0.7).abs() < 0.01);
}

#[test]
fn same_seed_same_model() {
    let (xs, ys) = linear_fixture();
    let config = TrainConfig {
        epochs: 30,
        seed: 9,
        ..Default::default()
    };
    let (a, ra) = train(&layout(4), &xs, &ys, &config).unwrap();
    let (b, rb) = train(&layout(4), &xs, &ys, &config).unwrap();
    assert!((ra.final_loss - rb.final_loss).abs() <= 1e-9);
    assert_eq!(a.flat_params(), b.flat_params());
    let (_, rc) = train(&layout(4), &xs, &ys, &TrainConfig { seed: 10, ..config }).unwrap();
    assert_ne!(ra.epoch_losses, rc.epoch_losses);
}

#[test]
fn loss_is_near_monotone_on_a_convex_toy() {
    // Full-batch steps with a small rate on a smooth single-input problem.
    let xs: Vec<FeatureVector> = (0..40).map(|i| vector(vec![i as f64 / 40.0, 0.0, 0.0])).collect();
    let ys: Vec<f64> = xs.iter().map(|v| 0.6 + 0.8 * v.values[0]).collect();
    let config = TrainConfig {
        hidden_widths: vec![4],
        learning_rate: 5e-3,
        epochs: 100,
        batch_size: 40,
        patience: 0,
        validation_fraction: 0.0,
        ..Default::default()
    };
    let (_, report) = train(&layout(3), &xs, &ys, &config).unwrap();
    for w in report.epoch_losses.windows(2) {
        assert!(w[1] <= w[0] * 1.05, "loss rose from {} to {}", w[0], w[1]);
    }
    assert!(report.epoch_losses.last().unwrap() < &report.epoch_losses[0]);
}

#[test]
fn gradient_check_is_stable_across_step_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..10 {
        let model = MlpModel::new_random(layout(5), &[6, 3], seed);
        let v = vector((0..5).map(|_| rng.gen_range(-1.5..1.5)).collect());
        for step in [1e-4, 1e-6] {
            let gap = gradient_check_with_step(&model, &v, 0.8, step).unwrap();
            assert!(gap < 1e-3, "step {step}: {gap}");
        }
    }
}
