//! Gradient accumulation must reproduce full-batch gradients for any split.

use pairsym_core::cotrain::{accumulate_batch_gradients, SiameseNet};
use pairsym_core::nn::{patch_tensor, EncoderConfig};
use pairsym_core::real::Real;
use pairsym_core::rng::Rng;
use pairsym_core::tensor::Tensor;
use pairsym_core::LossMode;

fn make_pairs<F: Real>(n: usize, side: usize, seed: u64) -> (Vec<(Tensor<F>, Tensor<F>)>, Vec<f64>) {
    let mut rng = Rng::new(seed);
    let pairs = (0..n)
        .map(|_| {
            (
                patch_tensor(
                    side,
                    (0..side * side).map(|_| F::from_f64(rng.range(0.0, 1.0))).collect(),
                )
                .unwrap(),
                patch_tensor(
                    side,
                    (0..side * side).map(|_| F::from_f64(rng.range(0.0, 1.0))).collect(),
                )
                .unwrap(),
            )
        })
        .collect();
    let labels = (0..n).map(|_| rng.range(0.05, 0.95)).collect();
    (pairs, labels)
}

fn grads_with_microbatch<F: Real>(
    cfg: &EncoderConfig,
    pairs: &[(Tensor<F>, Tensor<F>)],
    labels: &[f64],
    microbatch: usize,
) -> Vec<Vec<f64>> {
    let mut net: SiameseNet<F> = SiameseNet::init(cfg, 21).unwrap();
    let batch: Vec<usize> = (0..pairs.len()).collect();
    accumulate_batch_gradients(
        &mut net,
        pairs,
        labels,
        &batch,
        microbatch,
        LossMode::CrossBce,
        1.0,
    )
    .unwrap();
    net.store
        .ids()
        .map(|id| {
            net.store
                .get(id)
                .tensor
                .grad()
                .unwrap()
                .iter()
                .map(|g| g.to_f64())
                .collect()
        })
        .collect()
}

fn max_rel_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (ta, tb) in a.iter().zip(b) {
        for (&x, &y) in ta.iter().zip(tb) {
            let denom = x.abs().max(y.abs()).max(1e-12);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}

#[test]
fn k_equals_one_is_a_direct_pass() {
    let cfg = EncoderConfig {
        input_side: 8,
        channels_per_stage: vec![2],
        embedding_dim: 2,
        seed: 1,
    };
    let (pairs, labels) = make_pairs::<f64>(8, 8, 3);
    let full = grads_with_microbatch(&cfg, &pairs, &labels, 8);
    let same = grads_with_microbatch(&cfg, &pairs, &labels, 8);
    assert_eq!(full, same);
}

#[test]
fn any_split_matches_full_batch_in_f64() {
    let cfg = EncoderConfig {
        input_side: 8,
        channels_per_stage: vec![2, 3],
        embedding_dim: 3,
        seed: 1,
    };
    let (pairs, labels) = make_pairs::<f64>(16, 8, 7);
    let full = grads_with_microbatch(&cfg, &pairs, &labels, 16);
    for k in [2usize, 4, 8] {
        let split = grads_with_microbatch(&cfg, &pairs, &labels, 16 / k);
        let diff = max_rel_diff(&full, &split);
        assert!(diff < 1e-12, "k={k}: max rel diff {diff}");
    }
}

#[test]
fn halves_match_full_batch_of_eight_pairs_in_f32() {
    let cfg = EncoderConfig {
        input_side: 8,
        channels_per_stage: vec![2],
        embedding_dim: 2,
        seed: 2,
    };
    let (pairs, labels) = make_pairs::<f32>(8, 8, 11);
    let full = grads_with_microbatch(&cfg, &pairs, &labels, 8);
    let halves = grads_with_microbatch(&cfg, &pairs, &labels, 4);
    let diff = max_rel_diff(&full, &halves);
    assert!(diff < 1e-6, "max rel diff {diff}");
}

#[test]
fn protocol_shape_eight_subbatches_emulating_large_batch() {
    // structural check of the large-batch protocol: 8 microbatches of equal
    // size run, each scaled by 1/8, before a single optimizer step
    let cfg = EncoderConfig {
        input_side: 8,
        channels_per_stage: vec![2],
        embedding_dim: 2,
        seed: 3,
    };
    let (pairs, labels) = make_pairs::<f64>(32, 8, 13);
    let full = grads_with_microbatch(&cfg, &pairs, &labels, 32);
    let eight_way = grads_with_microbatch(&cfg, &pairs, &labels, 4);
    assert!(max_rel_diff(&full, &eight_way) < 1e-12);
}

#[test]
fn inconsistent_patch_shapes_are_a_configuration_error() {
    let cfg = EncoderConfig {
        input_side: 8,
        channels_per_stage: vec![2],
        embedding_dim: 2,
        seed: 4,
    };
    let mut net: SiameseNet<f64> = SiameseNet::init(&cfg, 5).unwrap();
    let (mut pairs, labels) = make_pairs::<f64>(4, 8, 17);
    // corrupt one pair with the wrong patch size
    pairs[2] = (
        patch_tensor(4, vec![0.5; 16]).unwrap(),
        patch_tensor(4, vec![0.5; 16]).unwrap(),
    );
    let batch: Vec<usize> = (0..4).collect();
    let err = accumulate_batch_gradients(
        &mut net,
        &pairs,
        &labels,
        &batch,
        2,
        LossMode::CrossBce,
        1.0,
    )
    .unwrap_err();
    assert!(matches!(err, pairsym_core::Error::Config(_)));
}
