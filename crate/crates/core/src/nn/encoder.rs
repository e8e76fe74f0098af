//! Small convolutional encoder.
//!
//! A stack of 3x3 conv + ReLU + 2x2 mean-pool stages followed by global
//! average pooling. The pooled vector is the embedding; when the requested
//! embedding width differs from the last stage's channel count, a dense
//! projection maps onto it.

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, NodeId};
use crate::nn::optim::{ParamGroup, ParamId, ParamStore};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct EncoderConfig {
    /// Side length of the square input patch, in pixels.
    pub input_side: usize,
    /// Output channels per conv stage; each stage halves the spatial side.
    pub channels_per_stage: Vec<usize>,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_side: 32,
            channels_per_stage: vec![4, 8],
            embedding_dim: 8,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 2 {
            return Err(Error::config(format!(
                "embedding_dim must be >= 2, got {}",
                self.embedding_dim
            )));
        }
        let stages = self.channels_per_stage.len();
        if stages == 0 {
            return Err(Error::config("at least one conv stage required"));
        }
        if self.channels_per_stage.iter().any(|&c| c == 0) {
            return Err(Error::config("stage channel counts must be positive"));
        }
        let divisor = 1usize << stages;
        if self.input_side == 0 || self.input_side % divisor != 0 {
            return Err(Error::config(format!(
                "input_side {} must be divisible by 2^{stages}",
                self.input_side
            )));
        }
        Ok(())
    }
}

/// Parameter handles for one encoder; values live in a `ParamStore`.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    convs: Vec<(ParamId, ParamId)>,
    proj: Option<(ParamId, ParamId)>,
}

impl Encoder {
    /// Register freshly initialized parameters: He-uniform weights, zero
    /// biases, deterministic in the provided generator.
    pub fn register<F: Real>(
        store: &mut ParamStore<F>,
        cfg: &EncoderConfig,
        rng: &mut Rng,
    ) -> Result<Encoder> {
        cfg.validate()?;
        let mut convs = Vec::new();
        let mut in_ch = 1usize;
        for (i, &out_ch) in cfg.channels_per_stage.iter().enumerate() {
            let fan_in = in_ch * 9;
            let w = he_uniform(rng, vec![out_ch, in_ch, 3, 3], fan_in);
            let wid = store.add(format!("conv{i}.weight"), false, w);
            let bid = store.add(
                format!("conv{i}.bias"),
                true,
                Tensor::zeros(vec![out_ch]),
            );
            convs.push((wid, bid));
            in_ch = out_ch;
        }
        let proj = if in_ch != cfg.embedding_dim {
            let w = he_uniform(rng, vec![cfg.embedding_dim, in_ch], in_ch);
            let wid = store.add("proj.weight", false, w);
            let bid = store.add("proj.bias", true, Tensor::zeros(vec![cfg.embedding_dim]));
            Some((wid, bid))
        } else {
            None
        };
        Ok(Encoder {
            cfg: cfg.clone(),
            convs,
            proj,
        })
    }

    /// All parameter ids in declaration order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for &(w, b) in &self.convs {
            ids.push(w);
            ids.push(b);
        }
        if let Some((w, b)) = self.proj {
            ids.push(w);
            ids.push(b);
        }
        ids
    }

    /// Groups: weights take part in layer adaptation, biases are excluded.
    pub fn groups(&self) -> Vec<ParamGroup> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for &(w, b) in &self.convs {
            weights.push(w);
            biases.push(b);
        }
        if let Some((w, b)) = self.proj {
            weights.push(w);
            biases.push(b);
        }
        vec![
            ParamGroup {
                name: "encoder.weights".into(),
                ids: weights,
                lars_excluded: false,
            },
            ParamGroup {
                name: "encoder.biases".into(),
                ids: biases,
                lars_excluded: true,
            },
        ]
    }

    /// Build the forward pass on a recorded graph. `input` must hold a
    /// `[1, side, side]` tensor.
    pub fn forward<F: Real>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        input: NodeId,
    ) -> Result<NodeId> {
        let shape = g.value(input).shape().to_vec();
        let side = self.cfg.input_side;
        if shape != [1, side, side] {
            return Err(Error::config(format!(
                "encoder expects input [1,{side},{side}], got {shape:?}"
            )));
        }
        // Center the [0,1] pixel range so first-stage pre-activations track
        // texture fluctuations instead of the patch's DC offset; with few
        // filters per stage an uncentered input leaves too many rectifier
        // channels dead at initialization.
        let mut x = g.add_const(input, -0.5)?;
        for &(wid, bid) in &self.convs {
            let w = g.param(store, wid)?;
            let b = g.param(store, bid)?;
            x = g.conv3x3(x, w, b)?;
            x = g.relu(x)?;
            x = g.mean_pool2(x)?;
        }
        let mut e = g.global_avg_pool(x)?;
        if let Some((wid, bid)) = self.proj {
            let w = g.param(store, wid)?;
            let b = g.param(store, bid)?;
            e = g.dense(e, w, b)?;
        }
        Ok(e)
    }

    /// Convenience inference: embedding of a single patch.
    pub fn embed<F: Real>(&self, store: &ParamStore<F>, patch: &Tensor<F>) -> Result<Vec<F>> {
        let mut g = Graph::new();
        let x = g.input(patch.clone())?;
        let e = self.forward(&mut g, store, x)?;
        Ok(g.value(e).data().to_vec())
    }
}

/// Wrap raw pixels as an encoder input tensor `[1, side, side]`.
pub fn patch_tensor<F: Real>(side: usize, pixels: Vec<F>) -> Result<Tensor<F>> {
    Tensor::new(vec![1, side, side], pixels)
}

fn he_uniform<F: Real>(rng: &mut Rng, shape: Vec<usize>, fan_in: usize) -> Tensor<F> {
    let limit = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| F::from_f64(rng.range(-limit, limit)))
        .collect();
    Tensor::new(shape, data).expect("shape/data constructed consistently")
}
