//! Command-line front end tying dataset synthesis, pretraining, and
//! evaluation into reproducible experiments.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! or state failure.

use clap::{Args, Parser, Subcommand, ValueEnum};
use pairsym_core::config::{ExperimentConfig, LossMode, ScoreKind, SoftLabelSource};
use pairsym_core::pipeline::{self, EvalTask};
use pairsym_core::{Error, Split};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "pairsym",
    version,
    about = "Unsupervised bilateral patch-pair pretraining with mixture-derived soft labels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic bilateral phantom dataset directory.
    Synth(SynthArgs),
    /// Train the dual co-training model (optionally a sweep or a resume).
    Pretrain(PretrainArgs),
    /// Evaluate a checkpoint: pair ranking, linear probes, or export.
    Eval(EvalArgs),
    /// Linear probe on frozen encoders (shortcut for eval probe tasks).
    Probe(ProbeArgs),
    /// Export concatenated pair embeddings to CSV.
    Export(ExportArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// JSON experiment config; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        match &self.config {
            None => Ok(ExperimentConfig::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::config(format!("bad config {}: {e}", path.display())))
            }
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    cases: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    lesion_probability: Option<f64>,
    #[arg(long)]
    lesion_contrast: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Largest planted misalignment in pixels.
    #[arg(long)]
    max_shift: Option<i32>,
    /// Treat the whole frame as tissue (calibration/testing knob).
    #[arg(long)]
    full_field: bool,
    /// Split downstream patches independently of pretraining cases.
    #[arg(long)]
    no_leakage_guard: bool,
    /// Overwrite an existing dataset directory.
    #[arg(long)]
    force: bool,
}

#[derive(Copy, Clone, ValueEnum)]
enum LossArg {
    CrossBce,
    Triplet,
    SslMix,
}

#[derive(Copy, Clone, ValueEnum)]
enum LabelSourceArg {
    Distance,
    Logit,
}

#[derive(Copy, Clone, ValueEnum)]
enum ScoreArg {
    Q,
    P,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Dataset directory produced by `synth`.
    #[arg(long)]
    data: PathBuf,
    /// Run directory for metrics and checkpoints.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    microbatch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Encoder stage widths, e.g. "4,8".
    #[arg(long)]
    channels: Option<String>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    /// Encoder input side; defaults to the dataset's patch size.
    #[arg(long)]
    input_side: Option<usize>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    #[arg(long, value_enum)]
    soft_label_source: Option<LabelSourceArg>,
    #[arg(long, value_enum)]
    score: Option<ScoreArg>,
    #[arg(long)]
    triplet_margin: Option<f64>,
    /// Experimental: one self-labeled network instead of the crossed pair.
    #[arg(long)]
    experimental_single: bool,
    /// Continue from `<out>/last.psym`.
    #[arg(long)]
    resume: bool,
    /// Comma-separated batch sizes; with --sweep-lrs expands to a grid.
    #[arg(long)]
    sweep_batch_sizes: Option<String>,
    /// Comma-separated learning rates for the sweep grid.
    #[arg(long)]
    sweep_lrs: Option<String>,
    /// Parallel sweep runs (runs are independent).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Copy, Clone, ValueEnum)]
enum TaskArg {
    PairAuc,
    ProbeBinary,
    ProbeMulticlass,
    ExportEmbeddings,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "pair-auc")]
    task: TaskArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// 2 for abnormal-vs-normal, 3 for the contrast-graded task.
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
    /// Which of the two networks embeds the pairs.
    #[arg(long, default_value_t = 1)]
    net: usize,
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Error> {
    s.split(',')
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<T>()
                .map_err(|_| Error::config(format!("cannot parse {what} entry '{p}'")))
        })
        .collect()
}

fn cmd_synth(args: SynthArgs) -> Result<(), Error> {
    let mut exp = args.config.load()?;
    let s = &mut exp.synth;
    if let Some(v) = args.cases {
        s.cases = v;
    }
    if let Some(v) = args.seed {
        s.seed = v;
    }
    if let Some(v) = args.patch_size {
        s.patch_size = v;
        exp.train.encoder.input_side = v;
    }
    if let Some(v) = args.height {
        s.height = v;
    }
    if let Some(v) = args.width {
        s.width = v;
    }
    if let Some(v) = args.lesion_probability {
        s.lesion_probability = v;
    }
    if let Some(v) = args.lesion_contrast {
        s.lesion_contrast = v;
    }
    if let Some(v) = args.noise_sigma {
        s.noise_sigma = v;
    }
    if let Some(v) = args.max_shift {
        s.max_shift = v;
    }
    if args.full_field {
        s.full_field = true;
    }
    if args.no_leakage_guard {
        s.leakage_guard = false;
    }

    let manifest = pipeline::run_synth(&exp, &args.out, args.force)?;
    let count = |split: Split| {
        manifest
            .pairs
            .iter()
            .filter(|p| p.split == split)
            .count()
    };
    println!(
        "dataset written to {} ({} cases)",
        args.out.display(),
        manifest.cases.len()
    );
    println!(
        "pairs: train {} / val {} / test {} (total {})",
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        manifest.pairs.len()
    );
    println!("labeled patches: {}", manifest.labeled.len());
    Ok(())
}

fn cmd_pretrain(args: PretrainArgs) -> Result<(), Error> {
    let mut exp = args.config.load()?;
    // echo the dataset's generation config into the experiment provenance
    // and follow its patch size unless explicitly overridden
    let manifest = pipeline::read_manifest(&args.data)?;
    exp.synth = manifest.config.clone();
    exp.train.encoder.input_side = args.input_side.unwrap_or(manifest.patch_size);
    let t = &mut exp.train;
    if let Some(v) = args.batch_size {
        t.batch_size = v;
        if args.microbatch.is_none() {
            t.microbatch = t.microbatch.min(v);
        }
    }
    if let Some(v) = args.microbatch {
        t.microbatch = v;
    }
    if let Some(v) = args.lr {
        t.learning_rate = v;
    }
    if let Some(v) = args.weight_decay {
        t.weight_decay = v;
    }
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
    if let Some(v) = args.warmup_epochs {
        t.warmup_epochs = v;
    }
    if let Some(v) = args.seed {
        t.seed = v;
    }
    if let Some(spec) = &args.channels {
        t.encoder.channels_per_stage = parse_list(spec, "channels")?;
    }
    if let Some(v) = args.embedding_dim {
        t.encoder.embedding_dim = v;
    }
    if let Some(v) = args.loss {
        t.loss_mode = match v {
            LossArg::CrossBce => LossMode::CrossBce,
            LossArg::Triplet => LossMode::Triplet,
            LossArg::SslMix => LossMode::SslMix,
        };
    }
    if let Some(v) = args.soft_label_source {
        t.soft_label_source = match v {
            LabelSourceArg::Distance => SoftLabelSource::Distance,
            LabelSourceArg::Logit => SoftLabelSource::Logit,
        };
    }
    if let Some(v) = args.score {
        t.score = match v {
            ScoreArg::Q => ScoreKind::Q,
            ScoreArg::P => ScoreKind::P,
        };
    }
    if let Some(v) = args.triplet_margin {
        t.triplet_margin = v;
    }
    if args.experimental_single {
        t.single_network = true;
    }

    match (&args.sweep_batch_sizes, &args.sweep_lrs) {
        (None, None) => {
            let summary = pipeline::run_pretrain(&exp, &args.data, &args.out, args.resume)?;
            println!(
                "trained {} epochs; best val avg-auc {} (epoch {:?}); test avg-auc {}",
                summary.epochs_run,
                summary
                    .best_val_avg_auc
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "n/a".into()),
                summary.best_epoch,
                summary
                    .test_avg_auc
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "n/a".into()),
            );
            println!("metrics: {}", args.out.join("metrics.csv").display());
            Ok(())
        }
        (bs, lrs) => {
            if args.resume {
                return Err(Error::config("--resume is not available with sweeps"));
            }
            let batch_sizes: Vec<usize> = match bs {
                Some(s) => parse_list(s, "sweep-batch-sizes")?,
                None => vec![exp.train.batch_size],
            };
            let learning_rates: Vec<f64> = match lrs {
                Some(s) => parse_list(s, "sweep-lrs")?,
                None => vec![exp.train.learning_rate],
            };
            let summary = pipeline::run_sweep(
                &exp,
                &args.data,
                &args.out,
                &batch_sizes,
                &learning_rates,
                args.jobs,
            )?;
            println!("batch_size  learning_rate  val_avg_auc  test_avg_auc");
            for row in &summary.rows {
                println!(
                    "{:>10}  {:>13e}  {:>11}  {:>12}",
                    row.batch_size,
                    row.learning_rate,
                    row.best_val_avg_auc
                        .map(|v| format!("{v:.4}"))
                        .unwrap_or_else(|| "n/a".into()),
                    row.test_avg_auc
                        .map(|v| format!("{v:.4}"))
                        .unwrap_or_else(|| "n/a".into()),
                );
            }
            if let Some(best) = summary.best {
                let row = &summary.rows[best];
                println!(
                    "best: batch {} lr {:e} (val {:.4}, test {})",
                    row.batch_size,
                    row.learning_rate,
                    row.best_val_avg_auc.unwrap_or(f64::NAN),
                    row.test_avg_auc
                        .map(|v| format!("{v:.4}"))
                        .unwrap_or_else(|| "n/a".into()),
                );
            }
            Ok(())
        }
    }
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    let task = match args.task {
        TaskArg::PairAuc => EvalTask::PairAuc,
        TaskArg::ProbeBinary => EvalTask::ProbeBinary,
        TaskArg::ProbeMulticlass => EvalTask::ProbeMulticlass,
        TaskArg::ExportEmbeddings => EvalTask::ExportEmbeddings,
    };
    let report = pipeline::run_eval(&args.checkpoint, &args.data, task, &args.out)?;
    if let Some(curve) = &report.pair_auc {
        println!(
            "test avg-auc over {} cutoffs: {:.4} ({} skipped)",
            curve.evaluated, curve.mean_auc, curve.skipped
        );
    }
    if let Some(probe) = &report.probe {
        for (c, auc) in probe.per_class_auc.iter().enumerate() {
            println!("class {c} vs rest: {auc:.4}");
        }
        println!("average auc: {:.4}", probe.average_auc);
    }
    if let Some(path) = &report.export_path {
        println!("embeddings written to {path}");
    }
    println!("report: {}", args.out.join("report.json").display());
    Ok(())
}

fn cmd_probe(args: ProbeArgs) -> Result<(), Error> {
    let task = match args.classes {
        2 => EvalTask::ProbeBinary,
        3 => EvalTask::ProbeMulticlass,
        n => {
            return Err(Error::config(format!(
                "probe supports 2 or 3 classes, got {n}"
            )))
        }
    };
    cmd_eval(EvalArgs {
        checkpoint: args.checkpoint,
        data: args.data,
        task: match task {
            EvalTask::ProbeBinary => TaskArg::ProbeBinary,
            _ => TaskArg::ProbeMulticlass,
        },
        out: args.out,
    })
}

fn cmd_export(args: ExportArgs) -> Result<(), Error> {
    let path = pipeline::run_export(&args.checkpoint, &args.data, &args.out, args.net)?;
    println!("embeddings written to {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Pretrain(args) => cmd_pretrain(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Probe(args) => cmd_probe(args),
        Command::Export(args) => cmd_export(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
