//! Evaluation protocols: ROC AUC, averaged AUC over abnormal-area cutoffs,
//! frozen-encoder linear probes with two-head ensembling, one-vs-rest
//! multiclass AUC, and embedding export.

use crate::config::EvalConfig;
use crate::cotrain::SiameseNet;
use crate::error::{Error, Result};
use crate::nn::graph::Graph;
use crate::nn::{AdamConfig, OptState, ParamGroup, ParamStore};
use crate::rng::Rng;
use crate::synthdata::manifest::{Dataset, PairRecord};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// ROC AUC of scores against binary labels, ties counted one half
/// (Mann-Whitney statistic; identical to the trapezoidal ROC area).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::config("scores and labels length mismatch"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both classes present".into(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::numeric("auc", "non-finite score"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // average ranks over tied groups (1-based)
    let mut rank_pos_sum = 0.0f64;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_pos_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_pos_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// AUC per abnormal-area cutoff plus their mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CutoffCurve {
    pub mean_auc: f64,
    /// (cutoff, auc); None where a cutoff left a single class.
    pub per_cutoff: Vec<(f64, Option<f64>)>,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Sweep `steps` uniform cutoffs in (0,1): at each cutoff c a pair counts
/// abnormal iff its overlap value is at least c; single-class cutoffs are
/// skipped and reported, and the mean runs over the evaluated ones.
pub fn average_auc_over_cutoffs(a: &[f64], scores: &[f64], steps: usize) -> Result<CutoffCurve> {
    if a.len() != scores.len() {
        return Err(Error::config("a values and scores length mismatch"));
    }
    if steps == 0 {
        return Err(Error::config("cutoff steps must be positive"));
    }
    let mut per_cutoff = Vec::with_capacity(steps);
    let mut sum = 0.0;
    let mut evaluated = 0;
    for i in 1..=steps {
        let c = i as f64 / (steps + 1) as f64;
        let labels: Vec<bool> = a.iter().map(|&v| v >= c).collect();
        match auc(scores, &labels) {
            Ok(v) => {
                per_cutoff.push((c, Some(v)));
                sum += v;
                evaluated += 1;
            }
            Err(Error::UndefinedMetric(_)) => per_cutoff.push((c, None)),
            Err(e) => return Err(e),
        }
    }
    if evaluated == 0 {
        return Err(Error::UndefinedMetric(
            "every cutoff produced a single class".into(),
        ));
    }
    Ok(CutoffCurve {
        mean_auc: sum / evaluated as f64,
        per_cutoff,
        evaluated,
        skipped: steps - evaluated,
    })
}

// ----- linear probe ----------------------------------------------------------

/// One linear head over frozen embeddings.
#[derive(Debug, Clone)]
pub struct ProbeHead {
    pub classes: usize,
    pub dim: usize,
    store: ParamStore<f32>,
    w: crate::nn::ParamId,
    b: crate::nn::ParamId,
}

impl ProbeHead {
    pub fn predict_proba(&self, emb: &[f32]) -> Vec<f64> {
        let w = self.store.get(self.w).tensor.data();
        let b = self.store.get(self.b).tensor.data();
        let mut logits = vec![0.0f64; self.classes];
        for (c, logit) in logits.iter_mut().enumerate() {
            let mut s = b[c] as f64;
            for (j, &x) in emb.iter().enumerate() {
                s += w[c * self.dim + j] as f64 * x as f64;
            }
            *logit = s;
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }
}

/// Train a softmax linear classifier on frozen embeddings.
pub fn train_linear_probe(
    embeddings: &[Vec<f32>],
    labels: &[usize],
    classes: usize,
    cfg: &EvalConfig,
) -> Result<ProbeHead> {
    if embeddings.is_empty() || embeddings.len() != labels.len() {
        return Err(Error::config("probe needs matching embeddings and labels"));
    }
    if classes < 2 {
        return Err(Error::config("probe needs at least 2 classes"));
    }
    for c in 0..classes {
        if !labels.iter().any(|&l| l == c) {
            return Err(Error::config(format!(
                "class {c} absent from the probe training split"
            )));
        }
    }
    if labels.iter().any(|&l| l >= classes) {
        return Err(Error::config("label outside class range"));
    }
    let dim = embeddings[0].len();
    let mut store: ParamStore<f32> = ParamStore::new();
    let w = store.add("probe.weight", false, Tensor::zeros(vec![classes, dim]));
    let b = store.add("probe.bias", true, Tensor::zeros(vec![classes]));
    let groups = vec![
        ParamGroup {
            name: "probe.weights".into(),
            ids: vec![w],
            lars_excluded: false,
        },
        ParamGroup {
            name: "probe.biases".into(),
            ids: vec![b],
            lars_excluded: true,
        },
    ];
    let mut opt = OptState::adam(
        AdamConfig {
            lr: cfg.probe_learning_rate,
            weight_decay: cfg.probe_weight_decay,
            ..AdamConfig::default()
        },
        &store,
    );

    let mut order: Vec<usize> = (0..embeddings.len()).collect();
    for epoch in 0..cfg.probe_epochs {
        let mut rng = Rng::derive(cfg.probe_seed, 0x9806_0000 ^ epoch as u64);
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.probe_batch_size) {
            let mut g: Graph<f32> = Graph::new();
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let x = g.input(Tensor::from_vec(embeddings[i].clone()))?;
                let wn = g.param(&store, w)?;
                let bn = g.param(&store, b)?;
                let logits = g.dense(x, wn, bn)?;
                losses.push(g.softmax_ce(logits, labels[i])?);
            }
            let mean = g.mean_of(&losses)?;
            g.backward(mean)?;
            g.grads_into(&mut store);
            opt.step(&mut store, &groups)?;
        }
    }
    Ok(ProbeHead {
        classes,
        dim,
        store,
        w,
        b,
    })
}

/// Mean of per-head class probabilities.
pub fn ensemble_proba(heads: &[&ProbeHead], embs: &[&[f32]]) -> Vec<f64> {
    debug_assert_eq!(heads.len(), embs.len());
    let classes = heads[0].classes;
    let mut acc = vec![0.0f64; classes];
    for (head, emb) in heads.iter().zip(embs) {
        for (a, p) in acc.iter_mut().zip(head.predict_proba(emb)) {
            *a += p;
        }
    }
    for a in acc.iter_mut() {
        *a /= heads.len() as f64;
    }
    acc
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// One-vs-rest AUC per class.
    pub per_class_auc: Vec<f64>,
    /// Mean of the per-class AUCs; for two classes this equals the plain
    /// binary AUC of the positive class.
    pub average_auc: f64,
}

/// Linear evaluation protocol: freeze the encoders, train one linear head
/// per encoder on training-split embeddings, ensemble by averaging the
/// heads' probabilities, and report one-vs-rest AUC on the test split.
pub fn probe_train_eval(
    net1: &SiameseNet<f32>,
    net2: Option<&SiameseNet<f32>>,
    dataset: &Dataset,
    classes: usize,
    multiclass: bool,
    cfg: &EvalConfig,
) -> Result<ProbeReport> {
    let label_of = |rec: &crate::synthdata::sampling::LabeledPatchRecord| -> usize {
        if multiclass {
            rec.label_multi as usize
        } else {
            rec.label_binary as usize
        }
    };
    let collect = |split| -> Result<(Vec<Vec<f32>>, Vec<Vec<f32>>, Vec<usize>)> {
        let recs = dataset.labeled_in_split(split);
        let mut e1 = Vec::with_capacity(recs.len());
        let mut e2 = Vec::with_capacity(recs.len());
        let mut ys = Vec::with_capacity(recs.len());
        for rec in recs {
            let patch: Tensor<f32> = dataset.labeled_patch(rec)?;
            e1.push(net1.embed(&patch)?);
            if let Some(n2) = net2 {
                e2.push(n2.embed(&patch)?);
            }
            ys.push(label_of(rec));
        }
        Ok((e1, e2, ys))
    };
    let (train1, train2, train_y) = collect(crate::synthdata::Split::Train)?;
    let (test1, test2, test_y) = collect(crate::synthdata::Split::Test)?;
    if train_y.is_empty() || test_y.is_empty() {
        return Err(Error::InsufficientData(
            "probe needs labeled patches in train and test splits".into(),
        ));
    }

    let head1 = train_linear_probe(&train1, &train_y, classes, cfg)?;
    let head2 = match net2 {
        Some(_) => Some(train_linear_probe(&train2, &train_y, classes, cfg)?),
        None => None,
    };

    let mut probas = Vec::with_capacity(test_y.len());
    for i in 0..test_y.len() {
        let proba = match &head2 {
            Some(h2) => ensemble_proba(&[&head1, h2], &[&test1[i], &test2[i]]),
            None => head1.predict_proba(&test1[i]),
        };
        probas.push(proba);
    }

    let mut per_class_auc = Vec::with_capacity(classes);
    for c in 0..classes {
        let scores: Vec<f64> = probas.iter().map(|p| p[c]).collect();
        let labels: Vec<bool> = test_y.iter().map(|&y| y == c).collect();
        per_class_auc.push(auc(&scores, &labels)?);
    }
    let average_auc = per_class_auc.iter().sum::<f64>() / classes as f64;
    Ok(ProbeReport {
        classes,
        train_size: train_y.len(),
        test_size: test_y.len(),
        per_class_auc,
        average_auc,
    })
}

// ----- embedding export -------------------------------------------------------

fn band_label(a: f64) -> &'static str {
    if a == 0.0 {
        "normal"
    } else if a <= 0.5 {
        "modest_overlap"
    } else {
        "high_overlap"
    }
}

/// Write one CSV row per pair: id, overlap value, overlap band, then the
/// concatenated embedding of the pair under the given network.
pub fn export_embeddings(
    net: &SiameseNet<f32>,
    dataset: &Dataset,
    pairs: &[&PairRecord],
    path: &Path,
) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    let dim = 2 * net.encoder_cfg.embedding_dim;
    let mut header = String::from("pair_id,a,band");
    for j in 0..dim {
        header.push_str(&format!(",e{j}"));
    }
    writeln!(f, "{header}")?;
    for rec in pairs {
        let (t1, t2) = dataset.pair_patches::<f32>(rec)?;
        let stats = net.forward_pair(&t1, &t2)?;
        let mut row = format!("{},{},{}", rec.pair_id, rec.a, band_label(rec.a));
        for v in stats.e1.iter().chain(stats.e2.iter()) {
            row.push_str(&format!(",{v}"));
        }
        writeln!(f, "{row}")?;
    }
    Ok(())
}
