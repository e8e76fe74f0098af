// Scratch harness for calibrating the default benchmark configuration.

use pairsym_core::config::ExperimentConfig;
use pairsym_core::cotrain::{self, CoTrainState, PairBank};
use pairsym_core::pipeline;
use pairsym_core::synthdata::manifest::{synthesize_dataset, Dataset};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(10);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.05);
    let asym: Option<f64> = args.get(3).map(|s| s.parse().unwrap());
    let lesion_prob: Option<f64> = args.get(4).map(|s| s.parse().unwrap());
    let max_lesions: Option<usize> = args.get(5).map(|s| s.parse().unwrap());
    let wd: Option<f64> = args.get(6).map(|s| s.parse().unwrap());
    let batch: Option<usize> = args.get(7).map(|s| s.parse().unwrap());

    let mut exp = ExperimentConfig::default();
    exp.train.epochs = epochs;
    exp.train.learning_rate = lr;
    if let Some(w) = wd {
        exp.train.weight_decay = w;
    }
    if let Some(b) = batch {
        exp.train.batch_size = b;
        exp.train.microbatch = exp.train.microbatch.min(b);
    }
    if let Some(a) = asym {
        exp.synth.asymmetry_amplitude = a;
    }
    if let Some(p) = lesion_prob {
        exp.synth.lesion_probability = p;
    }
    if let Some(m) = max_lesions {
        exp.synth.max_lesions = m;
    }

    let dir = std::env::temp_dir().join(format!(
        "pairsym-tune-a{}-p{}-m{}",
        exp.synth.asymmetry_amplitude, exp.synth.lesion_probability, exp.synth.max_lesions
    ));
    let t0 = Instant::now();
    if !dir.join("manifest.json").exists() {
        synthesize_dataset(&exp.synth, &dir, true).unwrap();
        println!("synth: {:.1}s", t0.elapsed().as_secs_f64());
    }
    let dataset = Dataset::load(&dir).unwrap();
    let train_n = dataset.pairs_in_split(pairsym_core::Split::Train).len();
    let val_n = dataset.pairs_in_split(pairsym_core::Split::Val).len();
    let abnormal = dataset
        .manifest
        .pairs
        .iter()
        .filter(|p| p.a > 0.0)
        .count();
    println!(
        "pairs: train {train_n} val {val_n} total {} abnormal {abnormal} labeled {}",
        dataset.manifest.pairs.len(),
        dataset.manifest.labeled.len()
    );

    for seed in [101u64, 202, 303] {
        let auc = pipeline::untrained_control(&exp, &dataset, seed).unwrap();
        println!("untrained control seed {seed}: val avg auc {auc:.4}");
    }

    let t1 = Instant::now();
    let mut state = CoTrainState::init(&exp.train).unwrap();
    // quick distance snapshot before training
    let bank = PairBank::from_dataset(&dataset, pairsym_core::Split::Train).unwrap();
    let (labels1, _) = cotrain::refit_soft_labels(&mut state, &bank).unwrap();
    println!(
        "initial gmm1: {:?}, labels mean {:.3}",
        state.gmm1,
        labels1.iter().sum::<f64>() / labels1.len() as f64
    );
    // raw distance diagnostics under the untrained encoder
    {
        let ds: Vec<f64> = bank
            .tensors
            .iter()
            .map(|(t1, t2)| state.net1.forward_pair(t1, t2).unwrap().d)
            .collect();
        let labels: Vec<bool> = bank.a.iter().map(|&a| a > 0.0).collect();
        let d_auc = pairsym_core::eval::auc(&ds, &labels).unwrap();
        println!("initial distance auc vs (a>0): {d_auc:.4}");
        let g1 = state.gmm1.unwrap();
        let p_direct: Vec<f64> = ds
            .iter()
            .map(|&d| pairsym_core::gmm::posterior_abnormal(&g1, d))
            .collect();
        let p_auc = pairsym_core::eval::auc(&p_direct, &labels).unwrap();
        println!("initial own-posterior auc vs (a>0): {p_auc:.4}");
        let net2 = state.net2.as_ref().unwrap();
        let ds2: Vec<f64> = bank
            .tensors
            .iter()
            .map(|(t1, t2)| net2.forward_pair(t1, t2).unwrap().d)
            .collect();
        let d2_auc = pairsym_core::eval::auc(&ds2, &labels).unwrap();
        let g2 = state.gmm2.unwrap();
        let p2_direct: Vec<f64> = ds2
            .iter()
            .map(|&d| pairsym_core::gmm::posterior_abnormal(&g2, d))
            .collect();
        let p2_auc = pairsym_core::eval::auc(&p2_direct, &labels).unwrap();
        println!("net2: distance auc {d2_auc:.4} posterior auc {p2_auc:.4} gmm2 {g2:?}");
        for d in [0.001, 0.0034, 0.01, 0.05, 0.103, 0.2, 0.3] {
            println!("  posterior({d}) = {:.4}", pairsym_core::gmm::posterior_abnormal(&g1, d));
        }
        // what characterizes the highest-distance pairs?
        let mut idx: Vec<usize> = (0..ds.len()).collect();
        idx.sort_by(|&i, &j| ds[j].partial_cmp(&ds[i]).unwrap());
        let recs = dataset.pairs_in_split(pairsym_core::Split::Train);
        for &i in idx.iter().take(8) {
            let bg = bank.tensors[i]
                .0
                .data()
                .iter()
                .filter(|&&v| v == 0.0)
                .count() as f64
                / 1024.0;
            let bg2 = bank.tensors[i]
                .1
                .data()
                .iter()
                .filter(|&&v| v == 0.0)
                .count() as f64
                / 1024.0;
            println!(
                "  high-D pair {i}: d {:.4} a {:.2} row {} col {} bg ({bg:.2},{bg2:.2})",
                ds[i], recs[i].a, recs[i].row, recs[i].col
            );
        }
    }
    // how informative are the very first soft labels?
    let label_auc = pairsym_core::eval::auc(
        &labels1,
        &bank.a.iter().map(|&a| a > 0.0).collect::<Vec<_>>(),
    )
    .unwrap();
    let mean_p_abn = labels1
        .iter()
        .zip(&bank.a)
        .filter(|(_, &a)| a > 0.5)
        .map(|(p, _)| *p)
        .sum::<f64>()
        / bank.a.iter().filter(|&&a| a > 0.5).count().max(1) as f64;
    let mean_p_norm = labels1
        .iter()
        .zip(&bank.a)
        .filter(|(_, &a)| a == 0.0)
        .map(|(p, _)| *p)
        .sum::<f64>()
        / bank.a.iter().filter(|&&a| a == 0.0).count().max(1) as f64;
    println!(
        "initial label auc vs (a>0): {label_auc:.4}; mean P abnormal {mean_p_abn:.3} vs normal {mean_p_norm:.3}"
    );
    state.gmm1 = None;
    state.gmm2 = None;

    let out = cotrain::train(&mut state, &dataset, &exp, None).unwrap();
    for m in &out.metrics {
        println!(
            "epoch {:2} loss1 {:.4} loss2 {:.4} val_avg_auc {:.4} gmm1 {:?}",
            m.epoch,
            m.loss1,
            m.loss2.unwrap_or(f64::NAN),
            m.val_avg_auc,
            m.gmm1_means.map(|(a, b)| (a * 100.0).round() / 100.0..(b * 100.0).round() / 100.0),
        );
    }
    println!(
        "train: {:.1}s total, best {:?}",
        t1.elapsed().as_secs_f64(),
        out.best_val_auc
    );

    // score-variant diagnostics on the final state
    let val = PairBank::from_dataset(&dataset, pairsym_core::Split::Val).unwrap();
    let labels: Vec<bool> = val.a.iter().map(|&a| a > 0.0).collect();
    let mut qs = Vec::new();
    let mut ps = Vec::new();
    let mut d1s = Vec::new();
    for (t1p, t2p) in &val.tensors {
        let s1 = state.net1.forward_pair(t1p, t2p).unwrap();
        let s2 = state.net2.as_ref().unwrap().forward_pair(t1p, t2p).unwrap();
        qs.push(1.0 - 0.5 * (s1.q + s2.q));
        let g1 = state.gmm1.unwrap();
        let g2 = state.gmm2.unwrap();
        ps.push(0.5
            * (pairsym_core::gmm::posterior_abnormal(&g1, s1.d)
                + pairsym_core::gmm::posterior_abnormal(&g2, s2.d)));
        d1s.push(0.5 * (s1.d + s2.d));
    }
    let avg = |scores: &[f64]| {
        pairsym_core::eval::average_auc_over_cutoffs(&val.a, scores, 100)
            .map(|c| c.mean_auc)
            .unwrap_or(f64::NAN)
    };
    println!(
        "final val: q-score avg-auc {:.4} | p-score {:.4} | d-score {:.4}",
        avg(&qs),
        avg(&ps),
        avg(&d1s)
    );
    println!(
        "final val plain auc (a>0): q {:.4} p {:.4} d {:.4}",
        pairsym_core::eval::auc(&qs, &labels).unwrap(),
        pairsym_core::eval::auc(&ps, &labels).unwrap(),
        pairsym_core::eval::auc(&d1s, &labels).unwrap()
    );
}
