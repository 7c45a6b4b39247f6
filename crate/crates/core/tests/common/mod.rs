//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use regprobe::harness::config::{AnomalySplitSpec, DatasetSpec, ExperimentConfig, OodSplitSpec};
use regprobe::{FeatureVector, ProbeParams, SeededRng, SplitTag};

/// Exhaustive O(n·m) Mann–Whitney AUROC with ties worth one half.
pub fn pairwise_auroc(id: &[f64], anomaly: &[f64]) -> f64 {
    let mut twice = 0u64;
    for &x in id {
        for &y in anomaly {
            if x > y {
                twice += 2;
            } else if x == y {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * id.len() * anomaly.len()) as f64
}

/// Try every observed score as a threshold; keep the largest whose TPR
/// reaches the target and report its FPR.
pub fn enumerated_fpr(id: &[f64], anomaly: &[f64], target: f64) -> f64 {
    let count = |v: &[f64], t: f64| v.iter().filter(|&&s| s >= t).count();
    let mut best: Option<f64> = None;
    for &t in id.iter().chain(anomaly) {
        let tpr = count(id, t) as f64 / id.len() as f64;
        if tpr >= target && best.is_none_or(|b| t > b) {
            best = Some(t);
        }
    }
    let t = best.expect("the minimum score always reaches TPR 1");
    count(anomaly, t) as f64 / anomaly.len() as f64
}

/// Mean cross-entropy written out directly from the definition.
pub fn naive_loss(samples: &[(Vec<f64>, usize)], theta: &[Vec<f64>], bias: Option<&[f64]>) -> f64 {
    let classes = theta[0].len();
    let mut total = 0.0;
    for (f, y) in samples {
        let logits: Vec<f64> = (0..classes)
            .map(|c| {
                let z: f64 = f.iter().zip(theta).map(|(x, row)| x * row[c]).sum();
                z + bias.map_or(0.0, |b| b[c])
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - logits[*y];
    }
    total / samples.len() as f64
}

/// Perceptron through the origin; `true` once an epoch makes no mistakes.
pub fn perceptron_separates(samples: &[(Vec<f64>, f64)], max_epochs: usize) -> bool {
    let mut w = vec![0.0; samples[0].0.len()];
    for _ in 0..max_epochs {
        let mut mistakes = 0;
        for (x, y) in samples {
            let s: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            if y * s <= 0.0 {
                mistakes += 1;
                for (wi, xi) in w.iter_mut().zip(x) {
                    *wi += y * xi;
                }
            }
        }
        if mistakes == 0 {
            return true;
        }
    }
    false
}

pub fn random_params(rng: &mut SeededRng, width: usize, classes: usize, bias: bool, scale: f64) -> ProbeParams {
    let mut p = ProbeParams::zeros(width, classes, bias);
    for v in p.theta.as_mut_slice() {
        *v = rng.gaussian(0.0, scale);
    }
    if let Some(b) = p.bias.as_mut() {
        for v in b {
            *v = rng.gaussian(0.0, scale);
        }
    }
    p
}

pub fn random_features(rng: &mut SeededRng, n: usize, width: usize, classes: usize, split: SplitTag) -> Vec<FeatureVector> {
    (0..n)
        .map(|_| {
            let values = (0..width).map(|_| rng.normal()).collect();
            FeatureVector::labeled(values, rng.below(classes), split).unwrap()
        })
        .collect()
}

/// A scaled-down direct-mode config for tests that run the whole pipeline.
pub fn small_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed,
        dataset: DatasetSpec {
            classes: 3,
            dim: 16,
            registers: 2,
            patches: 6,
            train_per_class: 60,
            test_per_class: 40,
            ood: vec![OodSplitSpec {
                name: "decorrelated".into(),
                per_class: 40,
                shift: 0.0,
                alignment: Some(0.0),
            }],
            anomaly: vec![AnomalySplitSpec {
                name: "far".into(),
                count: 80,
                displacement: 6.0,
            }],
            ..DatasetSpec::default()
        },
        ..ExperimentConfig::default()
    };
    cfg.train.iterations = 300;
    cfg.train.batch_size = 32;
    cfg
}
