//! End-to-end runners shared by the command-line front end and the
//! integration suites: dataset synthesis, pretraining (with sweeps and
//! resume), checkpoint evaluation, probing, and embedding export.

use crate::config::{ExperimentConfig, FORMAT_VERSION};
use crate::cotrain::{self, CoTrainState, PairBank};
use crate::error::{Error, Result};
use crate::eval::{self, CutoffCurve, ProbeReport};
use crate::synthdata::manifest::{synthesize_dataset, Dataset, DatasetManifest};
use crate::synthdata::Split;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Generate and persist a dataset directory.
pub fn run_synth(experiment: &ExperimentConfig, out_dir: &Path, force: bool) -> Result<DatasetManifest> {
    experiment.validate()?;
    synthesize_dataset(&experiment.synth, out_dir, force)
}

/// Read just the manifest of a dataset directory (no image blobs).
pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let json = std::fs::read_to_string(&path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&json)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_val_avg_auc: Option<f64>,
    /// Test-split score of the best-validation checkpoint.
    pub test_avg_auc: Option<f64>,
}

fn dataset_compatible(experiment: &ExperimentConfig, dataset: &Dataset) -> Result<()> {
    if dataset.manifest.format_version != FORMAT_VERSION {
        return Err(Error::data(format!(
            "dataset format version {} unsupported",
            dataset.manifest.format_version
        )));
    }
    if dataset.manifest.patch_size != experiment.train.encoder.input_side {
        return Err(Error::config(format!(
            "dataset patch size {} does not match encoder input side {}",
            dataset.manifest.patch_size, experiment.train.encoder.input_side
        )));
    }
    Ok(())
}

/// Score a split of the dataset with a trained state.
pub fn score_split(
    state: &CoTrainState,
    dataset: &Dataset,
    split: Split,
    steps: usize,
) -> Result<CutoffCurve> {
    let bank = PairBank::from_dataset(dataset, split)?;
    if bank.is_empty() {
        return Err(Error::InsufficientData(format!("no pairs in {split:?} split")));
    }
    let scores = cotrain::score_pairs(state, &bank.tensors, state.config.score)?;
    eval::average_auc_over_cutoffs(&bank.a, &scores, steps)
}

/// Train (or resume) one run, writing metrics and checkpoints under
/// `out_dir`, then score the best checkpoint on the test split.
pub fn run_pretrain(
    experiment: &ExperimentConfig,
    data_dir: &Path,
    out_dir: &Path,
    resume: bool,
) -> Result<PretrainSummary> {
    experiment.validate()?;
    let dataset = Dataset::load(data_dir)?;
    dataset_compatible(experiment, &dataset)?;

    let mut state = if resume {
        let (mut state, _) = crate::checkpoint::load(&out_dir.join("last.psym"))?;
        // allow extending the epoch budget on resume
        state.config.epochs = experiment.train.epochs;
        state
    } else {
        CoTrainState::init(&experiment.train)?
    };

    let output = cotrain::train(&mut state, &dataset, experiment, Some(out_dir))?;

    let test_avg_auc = {
        let best_path = out_dir.join("best.psym");
        if best_path.exists() {
            let (best_state, _) = crate::checkpoint::load(&best_path)?;
            match score_split(&best_state, &dataset, Split::Test, experiment.eval.cutoff_steps) {
                Ok(curve) => Some(curve.mean_auc),
                Err(Error::UndefinedMetric(_)) | Err(Error::InsufficientData(_)) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        }
    };

    let summary = PretrainSummary {
        format_version: FORMAT_VERSION,
        config: experiment.clone(),
        epochs_run: output.metrics.len(),
        best_epoch: output.best_epoch.or({
            // resumed runs may have found their best before this call
            None
        }),
        best_val_avg_auc: state.best_val_auc,
        test_avg_auc,
    };
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub best_val_avg_auc: Option<f64>,
    pub test_avg_auc: Option<f64>,
    pub out_dir: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub rows: Vec<SweepRow>,
    /// Index of the row with the best validation score.
    pub best: Option<usize>,
}

/// Grid search over batch sizes and learning rates; each combination runs
/// in its own subdirectory. `jobs > 1` runs combinations in parallel
/// threads (runs are independent by construction).
pub fn run_sweep(
    experiment: &ExperimentConfig,
    data_dir: &Path,
    out_dir: &Path,
    batch_sizes: &[usize],
    learning_rates: &[f64],
    jobs: usize,
) -> Result<SweepSummary> {
    let mut combos = Vec::new();
    for &b in batch_sizes {
        for &lr in learning_rates {
            combos.push((b, lr));
        }
    }
    if combos.is_empty() {
        return Err(Error::config("sweep needs at least one combination"));
    }
    std::fs::create_dir_all(out_dir)?;

    let run_one = |(b, lr): (usize, f64)| -> Result<SweepRow> {
        let mut exp = experiment.clone();
        exp.train.batch_size = b;
        exp.train.microbatch = exp.train.microbatch.min(b);
        exp.train.learning_rate = lr;
        let sub = out_dir.join(format!("b{b}_lr{lr:e}"));
        std::fs::create_dir_all(&sub)?;
        let summary = run_pretrain(&exp, data_dir, &sub, false)?;
        Ok(SweepRow {
            batch_size: b,
            learning_rate: lr,
            best_val_avg_auc: summary.best_val_avg_auc,
            test_avg_auc: summary.test_avg_auc,
            out_dir: sub.to_string_lossy().into_owned(),
        })
    };

    let rows: Vec<SweepRow> = if jobs <= 1 {
        combos.into_iter().map(run_one).collect::<Result<_>>()?
    } else {
        let mut rows = vec![None; batch_sizes.len() * learning_rates.len()];
        let chunks: Vec<Vec<(usize, (usize, f64))>> = combos
            .into_iter()
            .enumerate()
            .collect::<Vec<_>>()
            .chunks((rows.len() + jobs - 1) / jobs)
            .map(|c| c.to_vec())
            .collect();
        let results: Vec<Vec<(usize, Result<SweepRow>)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .into_iter()
                .map(|chunk| {
                    scope.spawn(move || {
                        chunk
                            .into_iter()
                            .map(|(i, combo)| (i, run_one(combo)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for (i, r) in results.into_iter().flatten() {
            rows[i] = Some(r?);
        }
        rows.into_iter().map(|r| r.unwrap()).collect()
    };

    let best = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.best_val_avg_auc.map(|v| (i, v)))
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .map(|(i, _)| i);

    let summary = SweepSummary {
        format_version: FORMAT_VERSION,
        config: experiment.clone(),
        rows,
        best,
    };
    std::fs::write(
        out_dir.join("sweep.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    let mut csv = String::from("batch_size,learning_rate,best_val_avg_auc,test_avg_auc\n");
    for r in &summary.rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.batch_size,
            r.learning_rate,
            r.best_val_avg_auc.map(|v| v.to_string()).unwrap_or_default(),
            r.test_avg_auc.map(|v| v.to_string()).unwrap_or_default(),
        ));
    }
    std::fs::write(out_dir.join("sweep.csv"), csv)?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalTask {
    PairAuc,
    ProbeBinary,
    ProbeMulticlass,
    ExportEmbeddings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub task: EvalTask,
    pub config: ExperimentConfig,
    pub split: String,
    pub pair_auc: Option<CutoffCurve>,
    pub probe: Option<ProbeReport>,
    pub export_path: Option<String>,
}

/// Evaluate a checkpoint on the test split of a dataset.
pub fn run_eval(
    checkpoint_path: &Path,
    data_dir: &Path,
    task: EvalTask,
    out_dir: &Path,
) -> Result<EvalReport> {
    let (state, experiment) = crate::checkpoint::load(checkpoint_path)?;
    let dataset = Dataset::load(data_dir)?;
    dataset_compatible(&experiment, &dataset)?;
    std::fs::create_dir_all(out_dir)?;

    let mut report = EvalReport {
        format_version: FORMAT_VERSION,
        task,
        config: experiment.clone(),
        split: "test".into(),
        pair_auc: None,
        probe: None,
        export_path: None,
    };

    match task {
        EvalTask::PairAuc => {
            let curve = score_split(&state, &dataset, Split::Test, experiment.eval.cutoff_steps)?;
            let mut csv = String::from("cutoff,auc\n");
            for (c, v) in &curve.per_cutoff {
                csv.push_str(&format!(
                    "{c},{}\n",
                    v.map(|x| x.to_string()).unwrap_or_default()
                ));
            }
            std::fs::write(out_dir.join("pair_auc_curve.csv"), csv)?;
            report.pair_auc = Some(curve);
        }
        EvalTask::ProbeBinary | EvalTask::ProbeMulticlass => {
            let missing_labels = dataset.manifest.labeled.is_empty();
            if missing_labels {
                return Err(Error::data(
                    "dataset has no labeled patches for probe tasks",
                ));
            }
            let (classes, multiclass) = match task {
                EvalTask::ProbeBinary => (2usize, false),
                _ => (3usize, true),
            };
            let probe = eval::probe_train_eval(
                &state.net1,
                state.net2.as_ref(),
                &dataset,
                classes,
                multiclass,
                &experiment.eval,
            )?;
            let mut csv = String::from("class,auc\n");
            for (c, v) in probe.per_class_auc.iter().enumerate() {
                csv.push_str(&format!("{c},{v}\n"));
            }
            csv.push_str(&format!("average,{}\n", probe.average_auc));
            std::fs::write(out_dir.join("probe_auc.csv"), csv)?;
            report.probe = Some(probe);
        }
        EvalTask::ExportEmbeddings => {
            let pairs = dataset.pairs_in_split(Split::Test);
            let path = out_dir.join("embeddings.csv");
            eval::export_embeddings(&state.net1, &dataset, &pairs, &path)?;
            report.export_path = Some(path.to_string_lossy().into_owned());
        }
    }

    let mut f = std::fs::File::create(out_dir.join("report.json"))?;
    f.write_all(serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok(report)
}

/// Export embeddings under a specific network of the checkpoint.
pub fn run_export(
    checkpoint_path: &Path,
    data_dir: &Path,
    out_file: &Path,
    which_net: usize,
) -> Result<PathBuf> {
    let (state, experiment) = crate::checkpoint::load(checkpoint_path)?;
    let dataset = Dataset::load(data_dir)?;
    dataset_compatible(&experiment, &dataset)?;
    let net = match which_net {
        1 => &state.net1,
        2 => state
            .net2
            .as_ref()
            .ok_or_else(|| Error::config("checkpoint has no second network"))?,
        n => return Err(Error::config(format!("network selector must be 1 or 2, got {n}"))),
    };
    let pairs = dataset.pairs_in_split(Split::Test);
    eval::export_embeddings(net, &dataset, &pairs, out_file)?;
    Ok(out_file.to_path_buf())
}

/// Validation score of freshly initialized (untrained) networks under the
/// full evaluation protocol (mixtures fit on the random encoders' training
/// distances); the null control for the pretraining benchmark.
pub fn untrained_control(
    experiment: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
) -> Result<f64> {
    let mut cfg = experiment.train.clone();
    cfg.seed = seed;
    let mut state = CoTrainState::init(&cfg)?;
    let train_bank = PairBank::from_dataset(dataset, Split::Train)?;
    cotrain::refit_soft_labels(&mut state, &train_bank)?;
    let bank = PairBank::from_dataset(dataset, Split::Val)?;
    let scores = cotrain::score_pairs(&state, &bank.tensors, experiment.train.score)?;
    Ok(eval::average_auc_over_cutoffs(&bank.a, &scores, experiment.eval.cutoff_steps)?.mean_auc)
}
