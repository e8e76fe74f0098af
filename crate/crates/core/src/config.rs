//! Experiment configuration.
//!
//! One `ExperimentConfig` fully specifies a run and is echoed verbatim into
//! every artifact (dataset manifests, checkpoints, metric logs, reports) for
//! provenance.

use crate::error::{Error, Result};
use crate::nn::EncoderConfig;
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    CrossBce,
    Triplet,
    SslMix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SoftLabelSource {
    /// Mixture fit on embedding distances.
    Distance,
    /// Mixture fit on the head's pre-activation outputs.
    Logit,
}

/// Which quantity scores a pair's abnormality during evaluation. The
/// mixture-posterior score is the default: the head's q is a single linear
/// functional of the concatenated embeddings and cannot express pair
/// dissimilarity, while the posterior rides directly on the learned
/// embedding distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    /// `1 - mean(q)` over the available networks.
    Q,
    /// Mean mixture posterior at the pair's embedding distances.
    P,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefitCadence {
    PerEpoch,
}

/// Synthetic bilateral phantom dataset parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SynthConfig {
    pub cases: usize,
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub seed: u64,
    /// Probability that a case carries at least one lesion.
    pub lesion_probability: f64,
    pub max_lesions: usize,
    pub lesion_radius_min: f64,
    pub lesion_radius_max: f64,
    /// Peak added brightness of a full-contrast lesion.
    pub lesion_contrast: f64,
    /// Std-dev of the independent per-side pixel noise.
    pub noise_sigma: f64,
    /// Amplitude of the shared low-frequency tissue texture.
    pub texture_amplitude: f64,
    /// Amplitude of the smooth per-side tissue asymmetry: normal bilateral
    /// variation that is independent between the two sides.
    pub asymmetry_amplitude: f64,
    /// True misalignment is drawn from [-max_shift, max_shift]^2.
    pub max_shift: i32,
    /// Registration search radius (must cover max_shift).
    pub register_search: i32,
    /// Drop tiles with more than this fraction of background in either patch.
    pub background_max_frac: f64,
    /// Drop tiles whose two masks disagree on more than this fraction.
    pub mask_disagree_max_frac: f64,
    /// Keep downstream patch splits case-consistent with pretraining splits.
    pub leakage_guard: bool,
    /// Test knob: treat the whole frame as tissue (no mask, no filtering).
    pub full_field: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            cases: 200,
            height: 256,
            width: 192,
            patch_size: 32,
            seed: 17,
            lesion_probability: 0.7,
            max_lesions: 2,
            lesion_radius_min: 7.0,
            lesion_radius_max: 14.0,
            lesion_contrast: 0.35,
            noise_sigma: 0.02,
            texture_amplitude: 0.14,
            asymmetry_amplitude: 0.06,
            max_shift: 4,
            register_search: 8,
            background_max_frac: 0.5,
            mask_disagree_max_frac: 0.25,
            leakage_guard: true,
            full_field: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0
            || self.height % self.patch_size != 0
            || self.width % self.patch_size != 0
        {
            return Err(Error::config(format!(
                "image {}x{} must be divisible by patch size {}",
                self.height, self.width, self.patch_size
            )));
        }
        if self.cases < 10 {
            return Err(Error::config(format!(
                "at least 10 cases required for patient-level splits, got {}",
                self.cases
            )));
        }
        if !(0.0..=1.0).contains(&self.lesion_probability) {
            return Err(Error::config("lesion_probability must lie in [0,1]"));
        }
        if self.lesion_radius_min <= 0.0 || self.lesion_radius_max < self.lesion_radius_min {
            return Err(Error::config("invalid lesion radius range"));
        }
        if self.register_search < self.max_shift {
            return Err(Error::config(
                "register_search must cover max_shift",
            ));
        }
        Ok(())
    }
}

/// Dual co-training loop parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Microbatch size for gradient accumulation; equal to `batch_size`
    /// means no accumulation.
    pub microbatch: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// Epochs trained with uniform soft labels before the first mixture fit.
    pub warmup_epochs: usize,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub loss_mode: LossMode,
    pub soft_label_source: SoftLabelSource,
    pub gmm_refit: RefitCadence,
    pub score: ScoreKind,
    /// Margin for the triplet loss mode.
    pub triplet_margin: f64,
    /// Train a single network on its own labels instead of the dual pair.
    pub single_network: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            microbatch: 64,
            learning_rate: 0.05,
            weight_decay: 1e-5,
            momentum: 0.9,
            epochs: 50,
            warmup_epochs: 1,
            seed: 1,
            encoder: EncoderConfig::default(),
            loss_mode: LossMode::CrossBce,
            soft_label_source: SoftLabelSource::Distance,
            gmm_refit: RefitCadence::PerEpoch,
            score: ScoreKind::P,
            triplet_margin: 1.0,
            single_network: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.epochs < 1 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::config(format!(
                "warmup_epochs {} must be < epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.microbatch == 0 || self.microbatch > self.batch_size {
            return Err(Error::config(format!(
                "microbatch {} must lie in [1, batch_size]",
                self.microbatch
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        self.encoder.validate()
    }
}

/// Linear-probe and scoring parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalConfig {
    pub probe_epochs: usize,
    pub probe_batch_size: usize,
    pub probe_learning_rate: f64,
    pub probe_weight_decay: f64,
    pub probe_seed: u64,
    /// Number of uniform abnormal-area cutoffs in (0,1).
    pub cutoff_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            probe_epochs: 100,
            probe_batch_size: 32,
            probe_learning_rate: 0.01,
            probe_weight_decay: 1e-5,
            probe_seed: 7,
            cutoff_steps: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        if self.eval.cutoff_steps == 0 {
            return Err(Error::config("cutoff_steps must be positive"));
        }
        if self.train.encoder.input_side != self.synth.patch_size {
            return Err(Error::config(format!(
                "encoder input side {} does not match patch size {}",
                self.train.encoder.input_side, self.synth.patch_size
            )));
        }
        Ok(())
    }
}
