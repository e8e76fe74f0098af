//! Dual Siamese co-training with mixture-derived soft labels.
//!
//! Two identical-architecture networks train simultaneously. Each epoch,
//! every network's pair distances are collected and a two-component mixture
//! is fit per network; the resulting posteriors become soft labels that are
//! crossed into the *other* network's binary cross entropy, which damps the
//! confirmation bias a single self-labeled network exhibits. Soft labels are
//! constants in the loss: no gradient flows through the mixture or the peer
//! network.

use crate::config::{ExperimentConfig, LossMode, ScoreKind, SoftLabelSource, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::average_auc_over_cutoffs;
use crate::gmm::{self, GmmParams};
use crate::nn::graph::{Graph, NodeId, PROB_EPS};
use crate::nn::{Encoder, EncoderConfig, LarsConfig, OptState, ParamGroup, ParamId, ParamStore};
use crate::real::Real;
use crate::rng::Rng;
use crate::synthdata::manifest::Dataset;
use crate::synthdata::Split;
use crate::tensor::Tensor;
use std::path::Path;

/// One Siamese network: a weight-shared encoder applied to both patches of a
/// pair, plus a dense head mapping the concatenated embedding to one logit.
#[derive(Debug, Clone)]
pub struct SiameseNet<F: Real = f32> {
    pub encoder_cfg: EncoderConfig,
    pub store: ParamStore<F>,
    pub encoder: Encoder,
    head_w: ParamId,
    head_b: ParamId,
    groups: Vec<ParamGroup>,
}

/// Inference outputs for one pair.
#[derive(Debug, Clone)]
pub struct PairStats<F: Real = f32> {
    pub e1: Vec<F>,
    pub e2: Vec<F>,
    /// Euclidean distance between the embeddings.
    pub d: f64,
    /// Head logit.
    pub z: f64,
    /// Predicted probability that the pair is normal.
    pub q: f64,
}

/// Node handles for a pair forward pass recorded on a graph.
pub struct PairNodes {
    pub e1: NodeId,
    pub e2: NodeId,
    pub d: NodeId,
    pub z: NodeId,
    pub q: NodeId,
}

impl<F: Real> SiameseNet<F> {
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = Rng::derive(seed, 0x51A7);
        let encoder = Encoder::register(&mut store, cfg, &mut rng)?;
        let emb = cfg.embedding_dim;
        // Quarter-strength init keeps the initial logit near zero so the
        // warmup epoch barely perturbs the encoder.
        let limit = 0.25 * (6.0 / (2 * emb) as f64).sqrt();
        let head_w_data: Vec<F> = (0..2 * emb)
            .map(|_| F::from_f64(rng.range(-limit, limit)))
            .collect();
        let head_w = store.add(
            "head.weight",
            false,
            Tensor::new(vec![1, 2 * emb], head_w_data)?,
        );
        let head_b = store.add("head.bias", true, Tensor::zeros(vec![1]));

        let mut groups = encoder.groups();
        groups[0].ids.push(head_w);
        groups[1].ids.push(head_b);
        groups[0].name = "weights".into();
        groups[1].name = "biases".into();
        Ok(SiameseNet {
            encoder_cfg: cfg.clone(),
            store,
            encoder,
            head_w,
            head_b,
            groups,
        })
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn digest(&self) -> u64 {
        self.store.digest()
    }

    /// Record the full pair pass: shared-weight encoder on both patches,
    /// distance, concatenated embedding, head logit, sigmoid.
    pub fn pair_nodes(
        &self,
        g: &mut Graph<F>,
        p1: NodeId,
        p2: NodeId,
    ) -> Result<PairNodes> {
        let e1 = self.encoder.forward(g, &self.store, p1)?;
        let e2 = self.encoder.forward(g, &self.store, p2)?;
        let d = g.euclidean_distance(e1, e2)?;
        let e = g.concat2(e1, e2)?;
        let hw = g.param(&self.store, self.head_w)?;
        let hb = g.param(&self.store, self.head_b)?;
        let z = g.dense(e, hw, hb)?;
        let q = g.sigmoid(z)?;
        Ok(PairNodes { e1, e2, d, z, q })
    }

    /// Inference on one pair (no gradients consumed).
    pub fn forward_pair(&self, p1: &Tensor<F>, p2: &Tensor<F>) -> Result<PairStats<F>> {
        let mut g = Graph::new();
        let n1 = g.input(p1.clone())?;
        let n2 = g.input(p2.clone())?;
        let nodes = self.pair_nodes(&mut g, n1, n2)?;
        Ok(PairStats {
            e1: g.value(nodes.e1).data().to_vec(),
            e2: g.value(nodes.e2).data().to_vec(),
            d: g.value(nodes.d).data()[0].to_f64(),
            z: g.value(nodes.z).data()[0].to_f64(),
            q: g.value(nodes.q).data()[0].to_f64(),
        })
    }

    pub fn embed(&self, patch: &Tensor<F>) -> Result<Vec<F>> {
        self.encoder.embed(&self.store, patch)
    }

    pub fn cast<G: Real>(&self) -> SiameseNet<G> {
        SiameseNet {
            encoder_cfg: self.encoder_cfg.clone(),
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            head_w: self.head_w,
            head_b: self.head_b,
            groups: self.groups.clone(),
        }
    }
}

// ----- losses ---------------------------------------------------------------

/// Soft-label binary cross entropy: `-[(1-P) ln q + P ln(1-q)]` with `q`
/// clamped away from {0,1}. For P in {0,1} this is the plain binary cross
/// entropy with ground-truth label `y = 1 - P`.
pub fn soft_bce_loss(p: f64, q: f64) -> f64 {
    let qc = q.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -((1.0 - p) * qc.ln() + p * (1.0 - qc).ln())
}

/// Crossed losses: network 1 is supervised by network 2's soft label and
/// vice versa. Returns (L1, L2, overall) where overall is their average.
pub fn cross_losses(p1: f64, p2: f64, q1: f64, q2: f64) -> (f64, f64, f64) {
    let l1 = soft_bce_loss(p2, q1);
    let l2 = soft_bce_loss(p1, q2);
    (l1, l2, 0.5 * (l1 + l2))
}

// ----- gradient accumulation -------------------------------------------------

/// Run one effective batch as a sequence of microbatches, each loss scaled
/// by its share of the batch, accumulating gradients into the network's
/// store. Returns the mean per-pair loss over the batch.
///
/// With microbatch == batch size this is a single direct pass; for any
/// split the accumulated gradients equal the full-batch gradients.
pub fn accumulate_batch_gradients<F: Real>(
    net: &mut SiameseNet<F>,
    pairs: &[(Tensor<F>, Tensor<F>)],
    labels: &[f64],
    batch: &[usize],
    microbatch: usize,
    mode: LossMode,
    triplet_margin: f64,
) -> Result<f64> {
    if microbatch == 0 {
        return Err(Error::config("microbatch size must be positive"));
    }
    if pairs.len() != labels.len() {
        return Err(Error::config(format!(
            "{} pairs but {} labels",
            pairs.len(),
            labels.len()
        )));
    }
    if batch.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let bn = batch.len();
    let mut loss_sum = 0.0f64;
    for micro in batch.chunks(microbatch) {
        let mut g: Graph<F> = Graph::new();
        let mut losses = Vec::with_capacity(micro.len());
        for &i in micro {
            let (ref t1, ref t2) = pairs[i];
            let n1 = g.input(t1.clone())?;
            let n2 = g.input(t2.clone())?;
            let nodes = net.pair_nodes(&mut g, n1, n2)?;
            let loss = match mode {
                LossMode::CrossBce => g.soft_bce(nodes.q, labels[i])?,
                LossMode::Triplet => {
                    let t = g.scale(nodes.d, 1.0 - 2.0 * labels[i])?;
                    let t = g.add_const(t, triplet_margin)?;
                    g.relu(t)?
                }
                LossMode::SslMix => {
                    return Err(Error::config(
                        "ssl-mix batches are built by the view-mixing path",
                    ))
                }
            };
            losses.push(loss);
        }
        let mean = g.mean_of(&losses)?;
        let scaled = g.scale(mean, micro.len() as f64 / bn as f64)?;
        g.backward(scaled)?;
        g.grads_into(&mut net.store);
        loss_sum += g.scalar(mean).to_f64() * micro.len() as f64;
    }
    Ok(loss_sum / bn as f64)
}

// ----- co-training state ------------------------------------------------------

/// Everything a run owns: both networks, their mixtures, optimizers, and
/// progress counters. In single-network mode the second slots are empty and
/// the network consumes its own soft labels.
#[derive(Debug, Clone)]
pub struct CoTrainState {
    pub net1: SiameseNet<f32>,
    pub net2: Option<SiameseNet<f32>>,
    pub gmm1: Option<GmmParams>,
    pub gmm2: Option<GmmParams>,
    pub opt1: OptState<f32>,
    pub opt2: Option<OptState<f32>>,
    /// Completed epochs.
    pub epoch: usize,
    pub best_val_auc: Option<f64>,
    pub config: TrainConfig,
}

impl CoTrainState {
    pub fn init(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let base = config.seed.wrapping_add(config.encoder.seed.rotate_left(32));
        let net1 = SiameseNet::init(&config.encoder, Rng::derive(base, 1).next_u64())?;
        let lars = LarsConfig {
            base_lr: config.learning_rate,
            weight_decay: config.weight_decay,
            momentum: config.momentum,
            eps: 1e-9,
        };
        let opt1 = OptState::lars(lars, &net1.store);
        let (net2, opt2) = if config.single_network {
            (None, None)
        } else {
            let net2 = SiameseNet::init(&config.encoder, Rng::derive(base, 2).next_u64())?;
            let opt2 = OptState::lars(lars, &net2.store);
            (Some(net2), Some(opt2))
        };
        Ok(CoTrainState {
            net1,
            net2,
            gmm1: None,
            gmm2: None,
            opt1,
            opt2,
            epoch: 0,
            best_val_auc: None,
            config: config.clone(),
        })
    }
}

/// Per-pair training tensors, materialized once.
pub struct PairBank {
    pub tensors: Vec<(Tensor<f32>, Tensor<f32>)>,
    pub a: Vec<f64>,
}

impl PairBank {
    pub fn from_dataset(dataset: &Dataset, split: Split) -> Result<PairBank> {
        let records = dataset.pairs_in_split(split);
        let mut tensors = Vec::with_capacity(records.len());
        let mut a = Vec::with_capacity(records.len());
        for rec in records {
            tensors.push(dataset.pair_patches::<f32>(rec)?);
            a.push(rec.a);
        }
        Ok(PairBank { tensors, a })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}

/// The quantity the mixture is fit on for one network, per training pair.
fn refit_values(
    net: &SiameseNet<f32>,
    bank: &PairBank,
    source: SoftLabelSource,
    mode: LossMode,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(bank.len());
    for (t1, t2) in &bank.tensors {
        let stats = net.forward_pair(t1, t2)?;
        let v = if mode == LossMode::SslMix {
            // untransformed-pair view loss
            crate::altloss::pair_view_loss(net, t1, t2)?
        } else {
            match source {
                SoftLabelSource::Distance => stats.d,
                SoftLabelSource::Logit => stats.z,
            }
        };
        out.push(v);
    }
    Ok(out)
}

fn soft_labels_from(
    values: &[f64],
    source: SoftLabelSource,
    mode: LossMode,
) -> Result<(GmmParams, Vec<f64>)> {
    let (params, _) = if mode != LossMode::SslMix && source == SoftLabelSource::Logit {
        // logits are signed; fit without the non-negativity constraint
        gmm::fit_values(values, gmm::DEFAULT_MAX_ITERS, gmm::DEFAULT_TOL)?
    } else {
        let set = gmm::DistanceSet::new(values.to_vec())?;
        gmm::fit_gmm_trace(&set, gmm::DEFAULT_MAX_ITERS, gmm::DEFAULT_TOL)?
    };
    let labels = values
        .iter()
        .map(|&v| match (mode, source) {
            (LossMode::SslMix, _) | (_, SoftLabelSource::Distance) => {
                gmm::posterior_abnormal(&params, v)
            }
            (_, SoftLabelSource::Logit) => crate::altloss::logit_soft_label(&params, v),
        })
        .collect();
    Ok((params, labels))
}

/// Refit both mixtures from frozen-network statistics over the training set
/// and cache the per-pair posteriors. Network k's statistics feed mixture k;
/// the returned labels are already crossed for consumption: `.0` supervises
/// network 1, `.1` network 2.
pub fn refit_soft_labels(
    state: &mut CoTrainState,
    bank: &PairBank,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let source = state.config.soft_label_source;
    let mode = state.config.loss_mode;
    let v1 = refit_values(&state.net1, bank, source, mode)?;
    let (g1, p1) = soft_labels_from(&v1, source, mode)?;
    state.gmm1 = Some(g1);
    match &state.net2 {
        Some(net2) => {
            let v2 = refit_values(net2, bank, source, mode)?;
            let (g2, p2) = soft_labels_from(&v2, source, mode)?;
            state.gmm2 = Some(g2);
            // crossed: net1 learns from net2's labels and vice versa
            Ok((p2, Some(p1)))
        }
        None => Ok((p1.clone(), None)),
    }
}

/// Score pairs for evaluation. The default abnormality score is
/// `1 - mean(q)` over the available networks; the mixture-posterior score is
/// available behind the config switch (falls back to the q score until the
/// first mixtures exist).
pub fn score_pairs(
    state: &CoTrainState,
    pairs: &[(Tensor<f32>, Tensor<f32>)],
    kind: ScoreKind,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pairs.len());
    for (t1, t2) in pairs {
        let s1 = state.net1.forward_pair(t1, t2)?;
        let s2 = state
            .net2
            .as_ref()
            .map(|n| n.forward_pair(t1, t2))
            .transpose()?;
        let score = match (kind, &state.gmm1) {
            (ScoreKind::P, Some(g1)) => {
                let mut p = gmm::posterior_abnormal(g1, s1.d);
                if let (Some(s2), Some(g2)) = (&s2, &state.gmm2) {
                    p = 0.5 * (p + gmm::posterior_abnormal(g2, s2.d));
                }
                p
            }
            _ => match &s2 {
                Some(s2) => 1.0 - 0.5 * (s1.q + s2.q),
                None => 1.0 - s1.q,
            },
        };
        out.push(score);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss1: f64,
    pub loss2: Option<f64>,
    pub loss: f64,
    pub val_avg_auc: f64,
    pub gmm1_means: Option<(f64, f64)>,
    pub gmm2_means: Option<(f64, f64)>,
}

impl EpochMetrics {
    pub fn csv_header() -> &'static str {
        "epoch,loss1,loss2,loss,val_avg_auc,gmm1_mean_low,gmm1_mean_high,gmm2_mean_low,gmm2_mean_high"
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.loss1,
            opt(self.loss2),
            self.loss,
            self.val_avg_auc,
            opt(self.gmm1_means.map(|m| m.0)),
            opt(self.gmm1_means.map(|m| m.1)),
            opt(self.gmm2_means.map(|m| m.0)),
            opt(self.gmm2_means.map(|m| m.1)),
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: Option<usize>,
    pub best_val_auc: Option<f64>,
}

/// Run the training loop from the state's current epoch up to the
/// configured epoch count. When `out_dir` is given, per-epoch metrics are
/// appended to `metrics.csv` and `last.psym` / `best.psym` checkpoints are
/// maintained there.
pub fn train(
    state: &mut CoTrainState,
    dataset: &Dataset,
    experiment: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutput> {
    let cfg = state.config.clone();
    cfg.validate()?;
    let train_bank = PairBank::from_dataset(dataset, Split::Train)?;
    let val_bank = PairBank::from_dataset(dataset, Split::Val)?;
    if train_bank.is_empty() {
        return Err(Error::InsufficientData("no training pairs in dataset".into()));
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let metrics_path = dir.join("metrics.csv");
        if state.epoch == 0 || !metrics_path.exists() {
            std::fs::write(&metrics_path, format!("{}\n", EpochMetrics::csv_header()))?;
        }
    }

    let mut metrics = Vec::new();
    let mut best_epoch = None;

    for epoch in state.epoch..cfg.epochs {
        // Soft labels: uniform during warmup, then refit from frozen
        // networks before any gradient update of the epoch.
        let (labels1, labels2) = if epoch < cfg.warmup_epochs {
            (
                vec![0.5; train_bank.len()],
                state.net2.as_ref().map(|_| vec![0.5; train_bank.len()]),
            )
        } else {
            refit_soft_labels(state, &train_bank)?
        };

        let mut order: Vec<usize> = (0..train_bank.len()).collect();
        let mut shuffle_rng = Rng::derive(cfg.seed, 0xE70C_0000 ^ epoch as u64);
        shuffle_rng.shuffle(&mut order);

        let mut sum1 = 0.0f64;
        let mut sum2 = 0.0f64;
        let mut seen = 0usize;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let ctx = |e: Error| match e {
                Error::Numeric { context, message } => Error::Numeric {
                    context: format!("epoch {epoch} batch {bi} {context}"),
                    message,
                },
                other => other,
            };
            let l1 = match cfg.loss_mode {
                LossMode::SslMix => crate::altloss::accumulate_sslmix_gradients(
                    &mut state.net1,
                    &train_bank.tensors,
                    &labels1,
                    batch,
                    cfg.microbatch,
                    cfg.seed ^ 0x55_1001,
                    epoch,
                )
                .map_err(ctx)?,
                _ => accumulate_batch_gradients(
                    &mut state.net1,
                    &train_bank.tensors,
                    &labels1,
                    batch,
                    cfg.microbatch,
                    cfg.loss_mode,
                    cfg.triplet_margin,
                )
                .map_err(ctx)?,
            };
            let groups1 = state.net1.groups.clone();
            state.opt1.step(&mut state.net1.store, &groups1)?;
            sum1 += l1 * batch.len() as f64;

            if let (Some(net2), Some(opt2), Some(labels2)) =
                (state.net2.as_mut(), state.opt2.as_mut(), labels2.as_ref())
            {
                let ctx2 = |e: Error| match e {
                    Error::Numeric { context, message } => Error::Numeric {
                        context: format!("epoch {epoch} batch {bi} {context}"),
                        message,
                    },
                    other => other,
                };
                let l2 = match cfg.loss_mode {
                    LossMode::SslMix => crate::altloss::accumulate_sslmix_gradients(
                        net2,
                        &train_bank.tensors,
                        labels2,
                        batch,
                        cfg.microbatch,
                        cfg.seed ^ 0x55_1002,
                        epoch,
                    )
                    .map_err(ctx2)?,
                    _ => accumulate_batch_gradients(
                        net2,
                        &train_bank.tensors,
                        labels2,
                        batch,
                        cfg.microbatch,
                        cfg.loss_mode,
                        cfg.triplet_margin,
                    )
                    .map_err(ctx2)?,
                };
                let groups = net2.groups.clone();
                opt2.step(&mut net2.store, &groups)?;
                sum2 += l2 * batch.len() as f64;
            }
            seen += batch.len();
        }
        let loss1 = sum1 / seen as f64;
        let loss2 = state.net2.as_ref().map(|_| sum2 / seen as f64);
        let loss = match loss2 {
            Some(l2) => 0.5 * (loss1 + l2),
            None => loss1,
        };

        let val_avg_auc = if val_bank.is_empty() {
            f64::NAN
        } else {
            let scores = score_pairs(state, &val_bank.tensors, cfg.score)?;
            match average_auc_over_cutoffs(&val_bank.a, &scores, experiment.eval.cutoff_steps) {
                Ok(curve) => curve.mean_auc,
                Err(Error::UndefinedMetric(_)) => f64::NAN,
                Err(e) => return Err(e),
            }
        };

        let row = EpochMetrics {
            epoch,
            loss1,
            loss2,
            loss,
            val_avg_auc,
            gmm1_means: state.gmm1.map(|g| (g.mean_low, g.mean_high)),
            gmm2_means: state.gmm2.map(|g| (g.mean_low, g.mean_high)),
        };

        state.epoch = epoch + 1;
        let improved = val_avg_auc.is_finite()
            && state.best_val_auc.map_or(true, |b| val_avg_auc > b);
        if improved {
            state.best_val_auc = Some(val_avg_auc);
            best_epoch = Some(epoch);
        }

        if let Some(dir) = out_dir {
            use std::io::Write;
            let mut f = std::fs::OpenOptions::new()
                .append(true)
                .open(dir.join("metrics.csv"))?;
            writeln!(f, "{}", row.csv_row())?;
            crate::checkpoint::save(&dir.join("last.psym"), state, experiment)?;
            if improved {
                crate::checkpoint::save(&dir.join("best.psym"), state, experiment)?;
            }
        }
        metrics.push(row);
    }

    Ok(TrainOutput {
        metrics,
        best_epoch,
        best_val_auc: state.best_val_auc,
    })
}
