//! Microbenchmarks for the hot kernels: pair forward/backward, mixture
//! fitting, ranking metrics, and shift registration.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use pairsym_core::config::{LossMode, SynthConfig};
use pairsym_core::cotrain::{accumulate_batch_gradients, SiameseNet};
use pairsym_core::eval::{auc, average_auc_over_cutoffs};
use pairsym_core::gmm::{fit_gmm, DistanceSet, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use pairsym_core::nn::{patch_tensor, EncoderConfig};
use pairsym_core::rng::Rng;
use pairsym_core::synthdata::{generate_case, register_pair};
use pairsym_core::tensor::Tensor;

fn default_net() -> SiameseNet<f32> {
    SiameseNet::init(&EncoderConfig::default(), 7).unwrap()
}

fn random_pairs(n: usize, side: usize, seed: u64) -> Vec<(Tensor<f32>, Tensor<f32>)> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| {
            (
                patch_tensor(side, (0..side * side).map(|_| rng.range(0.0, 1.0) as f32).collect())
                    .unwrap(),
                patch_tensor(side, (0..side * side).map(|_| rng.range(0.0, 1.0) as f32).collect())
                    .unwrap(),
            )
        })
        .collect()
}

fn bench_pair_forward(c: &mut Criterion) {
    let net = default_net();
    let pairs = random_pairs(1, 32, 3);
    c.bench_function("pair_forward_32px", |b| {
        b.iter(|| black_box(net.forward_pair(&pairs[0].0, &pairs[0].1).unwrap()))
    });
}

fn bench_batch_step(c: &mut Criterion) {
    let pairs = random_pairs(32, 32, 5);
    let labels = vec![0.5f64; 32];
    let batch: Vec<usize> = (0..32).collect();
    c.bench_function("batch32_forward_backward", |b| {
        b.iter_batched(
            default_net,
            |mut net| {
                accumulate_batch_gradients(
                    &mut net,
                    &pairs,
                    &labels,
                    &batch,
                    32,
                    LossMode::CrossBce,
                    1.0,
                )
                .unwrap()
            },
            criterion::BatchSize::SmallInput,
        )
    });
}

fn bench_gmm_fit(c: &mut Criterion) {
    let mut rng = Rng::new(11);
    let values: Vec<f64> = (0..4000)
        .map(|_| {
            if rng.chance(0.85) {
                (2.0 + 0.5 * rng.normal()).max(0.0)
            } else {
                (8.0 + rng.normal()).max(0.0)
            }
        })
        .collect();
    let set = DistanceSet::new(values).unwrap();
    c.bench_function("gmm_fit_4000", |b| {
        b.iter(|| black_box(fit_gmm(&set, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap()))
    });
}

fn bench_metrics(c: &mut Criterion) {
    let mut rng = Rng::new(13);
    let scores: Vec<f64> = (0..5000).map(|_| rng.uniform()).collect();
    let labels: Vec<bool> = (0..5000).map(|_| rng.chance(0.2)).collect();
    c.bench_function("auc_5000", |b| {
        b.iter(|| black_box(auc(&scores, &labels).unwrap()))
    });
    let a: Vec<f64> = (0..5000)
        .map(|_| if rng.chance(0.1) { rng.uniform() } else { 0.0 })
        .collect();
    c.bench_function("avg_auc_100_cutoffs_5000", |b| {
        b.iter(|| black_box(average_auc_over_cutoffs(&a, &scores, 100).unwrap()))
    });
}

fn bench_registration(c: &mut Criterion) {
    let cfg = SynthConfig {
        cases: 10,
        ..SynthConfig::default()
    };
    let case = generate_case(0, 42, &cfg).unwrap();
    c.bench_function("register_256x192_r8", |b| {
        b.iter(|| black_box(register_pair(&case, cfg.register_search).unwrap()))
    });
}

criterion_group!(
    benches,
    bench_pair_forward,
    bench_batch_step,
    bench_gmm_fit,
    bench_metrics,
    bench_registration
);
criterion_main!(benches);
