use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use regprobe::probe::logits_batch;
use regprobe::scoring::{score_batch, Provenance};
use regprobe::{Backbone, BackboneConfig, Exec, FeatureVector, Image, ProbeParams, SeededRng, SplitTag};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn backbone_forward(c: &mut Criterion) {
    let cfg = BackboneConfig::default();
    let backbone = Backbone::new(cfg.clone()).unwrap();
    let mut rng = SeededRng::new(1);
    let n = cfg.image_size * cfg.image_size * cfg.channels;
    let images: Vec<Image> = (0..64)
        .map(|_| Image::new(cfg.image_size, cfg.image_size, (0..n).map(|_| rng.normal()).collect()).unwrap())
        .collect();
    let mut group = c.benchmark_group("forward_batch");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| backbone.forward_batch(black_box(&images), exec).unwrap())
        });
    }
    group.finish();
}

fn probe_and_scores(c: &mut Criterion) {
    let (width, classes) = (64, 5);
    let mut rng = SeededRng::new(2);
    let samples: Vec<FeatureVector> = (0..20_000)
        .map(|i| FeatureVector::labeled((0..width).map(|_| rng.normal()).collect(), i % classes, SplitTag::IdTest).unwrap())
        .collect();
    let mut params = ProbeParams::zeros(width, classes, false);
    for v in params.theta.as_mut_slice() {
        *v = rng.gaussian(0.0, 0.1);
    }
    let logits = logits_batch(&samples, &params, Exec::Sequential).unwrap();

    let mut group = c.benchmark_group("logits_batch");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| logits_batch(black_box(&samples), &params, exec).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("score_batch");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| score_batch(black_box(&logits), 1.0, Provenance::Id, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, backbone_forward, probe_and_scores);
criterion_main!(benches);
