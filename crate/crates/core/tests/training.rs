mod common;

use common::{naive_loss, random_features};
use regprobe::probe::{mean_loss, train, TrainConfig, TRACE_INTERVAL};
use regprobe::{SeededRng, SplitTag};

fn tiny_set() -> Vec<regprobe::FeatureVector> {
    let mut rng = SeededRng::new(40);
    random_features(&mut rng, 40, 8, 3, SplitTag::IdTrain)
}

#[test]
fn loss_trace_is_non_increasing_at_small_lr() {
    let samples = tiny_set();
    let cfg = TrainConfig {
        iterations: 3000,
        learning_rate: 0.001,
        ..TrainConfig::default()
    };
    let trained = train(&samples, 3, &cfg).unwrap();
    let after: Vec<f64> = trained
        .loss_trace
        .iter()
        .filter(|p| p.iteration >= 100)
        .map(|p| p.loss)
        .collect();
    assert!(after.len() >= 2);
    for w in after.windows(2) {
        assert!(w[1] <= w[0], "loss rose from {} to {}", w[0], w[1]);
    }
}

#[test]
fn trace_points_are_full_dataset_losses() {
    let samples = tiny_set();
    let cfg = TrainConfig {
        iterations: 250,
        learning_rate: 0.05,
        batch_size: 7,
        ..TrainConfig::default()
    };
    let trained = train(&samples, 3, &cfg).unwrap();
    let iters: Vec<usize> = trained.loss_trace.iter().map(|p| p.iteration).collect();
    assert_eq!(iters, vec![0, TRACE_INTERVAL, 2 * TRACE_INTERVAL, 250]);
    let plain: Vec<(Vec<f64>, usize)> = samples.iter().map(|s| (s.values.clone(), s.label.unwrap())).collect();
    let theta: Vec<Vec<f64>> = trained.params.theta.iter_rows().map(|r| r.to_vec()).collect();
    let last = trained.loss_trace.last().unwrap().loss;
    assert!((last - naive_loss(&plain, &theta, None)).abs() <= 1e-12);
    assert_eq!(last, mean_loss(&samples, &trained.params).unwrap());
}

#[test]
fn training_is_deterministic_in_the_shuffle_seed() {
    let samples = tiny_set();
    let cfg = TrainConfig {
        iterations: 120,
        batch_size: 16,
        momentum: 0.9,
        bias: true,
        shuffle_seed: 3,
        ..TrainConfig::default()
    };
    let a = train(&samples, 3, &cfg).unwrap();
    let b = train(&samples, 3, &cfg).unwrap();
    assert_eq!(a, b);
    let c = train(
        &samples,
        3,
        &TrainConfig {
            shuffle_seed: 4,
            ..cfg
        },
    )
    .unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn full_batch_equals_gradient_descent() {
    // With batch = n every step uses the whole set regardless of order.
    let samples = tiny_set();
    let cfg = TrainConfig {
        iterations: 5,
        learning_rate: 0.1,
        batch_size: samples.len(),
        ..TrainConfig::default()
    };
    let trained = train(&samples, 3, &cfg).unwrap();
    let mut params = regprobe::ProbeParams::zeros(8, 3, false);
    for _ in 0..5 {
        let g = regprobe::probe::gradient(&samples, &params).unwrap();
        for (p, gg) in params.theta.as_mut_slice().iter_mut().zip(g.theta.as_slice()) {
            *p -= 0.1 * gg;
        }
    }
    for (a, b) in trained.params.theta.as_slice().iter().zip(params.theta.as_slice()) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn rejects_bad_inputs() {
    let samples = tiny_set();
    assert!(train(&samples, 3, &TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }).is_err());
    assert!(train(&samples, 3, &TrainConfig { batch_size: 0, ..TrainConfig::default() }).is_err());
    assert!(train(&samples, 2, &TrainConfig::default()).is_err(), "label 2 with C = 2");
    assert!(train(&[], 3, &TrainConfig::default()).is_err());
    let mut test_split = samples.clone();
    test_split[0].split = SplitTag::IdTest;
    assert!(train(&test_split, 3, &TrainConfig::default()).is_err());
}
