//! Unsupervised representation learning on bilateral image patch pairs.
//!
//! Two weight-shared Siamese networks are co-trained on patch pairs sampled
//! from mirrored synthetic phantoms. Because pair labels are unknown, each
//! network's embedding distances are modeled by a two-component Gaussian
//! mixture whose posterior serves as a soft label, crossed into the other
//! network's binary cross entropy. The crate provides the differentiable
//! core, the mixture, the phantom data pipeline, the training loop, and the
//! evaluation protocols (averaged AUC over abnormal-area cutoffs, linear
//! probes with two-encoder ensembling, one-vs-rest multiclass AUC).

pub mod altloss;
pub mod checkpoint;
pub mod config;
pub mod cotrain;
pub mod error;
pub mod eval;
pub mod gmm;
pub mod nn;
pub mod pipeline;
pub mod real;
pub mod rng;
pub mod synthdata;
pub mod tensor;

pub use config::{EvalConfig, ExperimentConfig, LossMode, ScoreKind, SoftLabelSource, SynthConfig, TrainConfig};
pub use cotrain::{CoTrainState, SiameseNet};
pub use error::{Error, Result};
pub use gmm::{DistanceSet, GmmParams};
pub use nn::{Encoder, EncoderConfig, OptState, ParamGroup, ParamStore};
pub use real::Real;
pub use rng::Rng;
pub use synthdata::{BBox, Split};
pub use tensor::Tensor;
