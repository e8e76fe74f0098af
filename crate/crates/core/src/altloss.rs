//! Alternative loss designs, exposed as pure functions and experimental
//! training modes: a soft-label triplet loss on the embedding distance, a
//! soft label derived from the head's linear output instead of the
//! distance, and a view-mixing combiner that weights same-patch and
//! cross-patch self-supervised losses by the soft label.
//!
//! All three are selectable from the CLI but carry no acceptance-level
//! performance claims; training with them is known to be temperamental.

use crate::cotrain::SiameseNet;
use crate::error::{Error, Result};
use crate::gmm::{posterior_abnormal, GmmParams};
use crate::nn::graph::Graph;
use crate::rng::Rng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct TripletConfig {
    pub margin: f64,
}

impl TripletConfig {
    pub fn new(margin: f64) -> Result<Self> {
        if !margin.is_finite() || margin < 0.0 {
            return Err(Error::config(format!(
                "triplet margin must be finite and non-negative, got {margin}"
            )));
        }
        Ok(TripletConfig { margin })
    }
}

/// Soft-label triplet loss: the soft label splits the single pair distance
/// into positive and negative shares, `max(0, (1-P)*D - P*D + m)`.
pub fn soft_triplet_loss(p: f64, d: f64, cfg: &TripletConfig) -> f64 {
    ((1.0 - p) * d - p * d + cfg.margin).max(0.0)
}

/// Soft label from the head's linear output. The mixture is fit on the
/// logit set; a higher logit means the pair is more likely normal, so the
/// abnormal soft label is the complement of the high-component posterior.
pub fn logit_soft_label(params: &GmmParams, z: f64) -> f64 {
    1.0 - posterior_abnormal(params, z)
}

/// Self-supervised loss values for every combination of the four views of a
/// pair: two views per patch.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ViewLossGrid {
    /// l(v11, v12): both views from patch 1.
    pub same_1: f64,
    /// l(v21, v22): both views from patch 2.
    pub same_2: f64,
    pub cross_11_21: f64,
    pub cross_11_22: f64,
    pub cross_12_21: f64,
    pub cross_12_22: f64,
}

impl ViewLossGrid {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.same_1,
            self.same_2,
            self.cross_11_21,
            self.cross_11_22,
            self.cross_12_21,
            self.cross_12_22,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config(
                "view losses must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

/// Mix same-patch and cross-patch view losses by the soft label:
/// `P * mean(same) + (1-P) * mean(cross)`.
pub fn ssl_mix_loss(p: f64, grid: &ViewLossGrid) -> f64 {
    p * (grid.same_1 + grid.same_2) / 2.0
        + (1.0 - p)
            * (grid.cross_11_21 + grid.cross_11_22 + grid.cross_12_21 + grid.cross_12_22)
            / 4.0
}

// ----- view augmentation and the mixing training path ----------------------

/// Light stochastic view: integer shift with edge clamping, contrast scale,
/// pixel noise. Deterministic in the provided generator.
pub fn augment_view(patch: &Tensor<f32>, rng: &mut Rng) -> Result<Tensor<f32>> {
    let shape = patch.shape().to_vec();
    if shape.len() != 3 || shape[0] != 1 {
        return Err(Error::config("augment_view expects [1,s,s] patches"));
    }
    let s = shape[1];
    let dx = rng.range_i32(-2, 2);
    let dy = rng.range_i32(-2, 2);
    let gain = rng.range(0.9, 1.1);
    let src = patch.data();
    let mut out = vec![0.0f32; s * s];
    for y in 0..s {
        let sy = (y as i32 - dy).clamp(0, s as i32 - 1) as usize;
        for x in 0..s {
            let sx = (x as i32 - dx).clamp(0, s as i32 - 1) as usize;
            let v = src[sy * s + sx] as f64 * gain + 0.01 * rng.normal();
            out[y * s + x] = v.clamp(0.0, 1.0) as f32;
        }
    }
    Tensor::new(shape, out)
}

/// The self-supervised loss of one (possibly untransformed) patch pair:
/// mean squared error between the unit-normalized embeddings.
pub fn pair_view_loss(net: &SiameseNet<f32>, p1: &Tensor<f32>, p2: &Tensor<f32>) -> Result<f64> {
    let mut g: Graph<f32> = Graph::new();
    let a = g.input(p1.clone())?;
    let b = g.input(p2.clone())?;
    let ea = net.encoder.forward(&mut g, &net.store, a)?;
    let eb = net.encoder.forward(&mut g, &net.store, b)?;
    let na = g.l2_normalize(ea)?;
    let nb = g.l2_normalize(eb)?;
    let l = g.mse(na, nb)?;
    Ok(g.scalar(l) as f64)
}

/// One effective batch of the view-mixing loss with gradient accumulation,
/// mirroring the main training path's scaling. Returns the mean pair loss.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_sslmix_gradients(
    net: &mut SiameseNet<f32>,
    pairs: &[(Tensor<f32>, Tensor<f32>)],
    labels: &[f64],
    batch: &[usize],
    microbatch: usize,
    seed: u64,
    epoch: usize,
) -> Result<f64> {
    if microbatch == 0 {
        return Err(Error::config("microbatch size must be positive"));
    }
    if batch.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let bn = batch.len();
    let mut loss_sum = 0.0f64;
    for micro in batch.chunks(microbatch) {
        let mut g: Graph<f32> = Graph::new();
        let mut losses = Vec::with_capacity(micro.len());
        for &i in micro {
            let (ref t1, ref t2) = pairs[i];
            let mut rng = Rng::derive(seed, (epoch as u64) << 32 | i as u64);
            let v11 = g.input(augment_view(t1, &mut rng)?)?;
            let v12 = g.input(augment_view(t1, &mut rng)?)?;
            let v21 = g.input(augment_view(t2, &mut rng)?)?;
            let v22 = g.input(augment_view(t2, &mut rng)?)?;
            let embed = |g: &mut Graph<f32>, v| -> Result<_> {
                let e = net.encoder.forward(g, &net.store, v)?;
                g.l2_normalize(e)
            };
            let n11 = embed(&mut g, v11)?;
            let n12 = embed(&mut g, v12)?;
            let n21 = embed(&mut g, v21)?;
            let n22 = embed(&mut g, v22)?;
            let p = labels[i];
            let same1 = g.mse(n11, n12)?;
            let same2 = g.mse(n21, n22)?;
            let same = g.add(same1, same2)?;
            let same = g.scale(same, p / 2.0)?;
            let c1 = g.mse(n11, n21)?;
            let c2 = g.mse(n11, n22)?;
            let c3 = g.mse(n12, n21)?;
            let c4 = g.mse(n12, n22)?;
            let c12 = g.add(c1, c2)?;
            let c34 = g.add(c3, c4)?;
            let cross = g.add(c12, c34)?;
            let cross = g.scale(cross, (1.0 - p) / 4.0)?;
            losses.push(g.add(same, cross)?);
        }
        let mean = g.mean_of(&losses)?;
        let scaled = g.scale(mean, micro.len() as f64 / bn as f64)?;
        g.backward(scaled)?;
        g.grads_into(&mut net.store);
        loss_sum += g.scalar(mean) as f64 * micro.len() as f64;
    }
    Ok(loss_sum / bn as f64)
}
