//! Checkpoint format.
//!
//! Layout: magic bytes `PSYM`, a little-endian u32 format version, a
//! little-endian u64 JSON length, the JSON metadata block (full experiment
//! config, epoch, optimizer kind and step counts, mixture parameters, and a
//! parameter manifest), then raw little-endian f32 blobs: each network's
//! parameters in declaration order followed by its optimizer moment buffers.

use crate::config::{ExperimentConfig, FORMAT_VERSION};
use crate::cotrain::{CoTrainState, SiameseNet};
use crate::error::{Error, Result};
use crate::gmm::GmmParams;
use crate::nn::{LarsConfig, OptState, ParamStore};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"PSYM";

#[derive(Debug, Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
    lars_excluded: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetMeta {
    params: Vec<ParamMeta>,
    /// Lengths of the optimizer moment buffers that follow the parameters.
    opt_buffer_lens: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    format_version: u32,
    experiment: ExperimentConfig,
    epoch: usize,
    best_val_auc: Option<f64>,
    optimizer_kind: String,
    step_counts: Vec<u64>,
    gmm1: Option<GmmParams>,
    gmm2: Option<GmmParams>,
    nets: Vec<NetMeta>,
}

fn net_meta(store: &ParamStore<f32>, opt: &OptState<f32>) -> NetMeta {
    NetMeta {
        params: store
            .iter()
            .map(|(_, e)| ParamMeta {
                name: e.name.clone(),
                shape: e.tensor.shape().to_vec(),
                lars_excluded: e.lars_excluded,
            })
            .collect(),
        opt_buffer_lens: opt.buffers().iter().map(|b| b.len()).collect(),
    }
}

fn push_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn net_blobs(store: &ParamStore<f32>, opt: &OptState<f32>, out: &mut Vec<u8>) {
    for (_, e) in store.iter() {
        push_f32s(out, e.tensor.data());
    }
    for buf in opt.buffers() {
        push_f32s(out, buf);
    }
}

pub fn save(path: &Path, state: &CoTrainState, experiment: &ExperimentConfig) -> Result<()> {
    let mut nets = vec![net_meta(&state.net1.store, &state.opt1)];
    if let (Some(net2), Some(opt2)) = (&state.net2, &state.opt2) {
        nets.push(net_meta(&net2.store, opt2));
    }
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        experiment: experiment.clone(),
        epoch: state.epoch,
        best_val_auc: state.best_val_auc,
        optimizer_kind: state.opt1.kind().to_string(),
        step_counts: match (&state.opt2,) {
            (Some(opt2),) => vec![state.opt1.step_count(), opt2.step_count()],
            (None,) => vec![state.opt1.step_count()],
        },
        gmm1: state.gmm1,
        gmm2: state.gmm2,
        nets,
    };
    let json = serde_json::to_vec(&meta)?;

    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    net_blobs(&state.net1.store, &state.opt1, &mut bytes);
    if let (Some(net2), Some(opt2)) = (&state.net2, &state.opt2) {
        net_blobs(&net2.store, opt2, &mut bytes);
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

struct BlobReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BlobReader<'a> {
    fn take_f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let need = n * 4;
        if self.pos + need > self.bytes.len() {
            return Err(Error::data("checkpoint truncated"));
        }
        let out = self.bytes[self.pos..self.pos + need]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        self.pos += need;
        Ok(out)
    }
}

fn restore_net(
    net: &mut SiameseNet<f32>,
    opt: &mut OptState<f32>,
    meta: &NetMeta,
    reader: &mut BlobReader,
    step_count: u64,
) -> Result<()> {
    if meta.params.len() != net.store.len() {
        return Err(Error::data(format!(
            "checkpoint has {} parameters, network expects {}",
            meta.params.len(),
            net.store.len()
        )));
    }
    for (id, pm) in net.store.ids().zip(&meta.params).collect::<Vec<_>>() {
        let entry = net.store.get_mut(id);
        if entry.name != pm.name || entry.tensor.shape() != pm.shape.as_slice() {
            return Err(Error::data(format!(
                "checkpoint parameter {} {:?} does not match network {} {:?}",
                pm.name,
                pm.shape,
                entry.name,
                entry.tensor.shape()
            )));
        }
        let values = reader.take_f32s(entry.tensor.numel())?;
        entry.tensor.data_mut().copy_from_slice(&values);
    }
    let mut bufs = Vec::with_capacity(meta.opt_buffer_lens.len());
    for &len in &meta.opt_buffer_lens {
        bufs.push(reader.take_f32s(len)?);
    }
    opt.restore_buffers(bufs)?;
    opt.set_step_count(step_count);
    Ok(())
}

/// Load a checkpoint, rebuilding the training state it captured.
pub fn load(path: &Path) -> Result<(CoTrainState, ExperimentConfig)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::data(format!("cannot open checkpoint {}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::data("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != FORMAT_VERSION {
        return Err(Error::data(format!(
            "checkpoint format version {version} not supported (expected {FORMAT_VERSION})"
        )));
    }
    let json_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if 16 + json_len > bytes.len() {
        return Err(Error::data("checkpoint truncated"));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[16..16 + json_len])?;
    let experiment = meta.experiment.clone();
    let train_cfg = experiment.train.clone();

    // Rebuild structure, then overwrite values from the blobs.
    let base = train_cfg.seed.wrapping_add(train_cfg.encoder.seed.rotate_left(32));
    let mut net1 = SiameseNet::init(&train_cfg.encoder, Rng::derive(base, 1).next_u64())?;
    let lars = LarsConfig {
        base_lr: train_cfg.learning_rate,
        weight_decay: train_cfg.weight_decay,
        momentum: train_cfg.momentum,
        eps: 1e-9,
    };
    let mut opt1 = OptState::lars(lars, &net1.store);
    let mut reader = BlobReader {
        bytes: &bytes[16 + json_len..],
        pos: 0,
    };
    restore_net(
        &mut net1,
        &mut opt1,
        &meta.nets[0],
        &mut reader,
        meta.step_counts.first().copied().unwrap_or(0),
    )?;

    let (net2, opt2) = if meta.nets.len() > 1 {
        let mut n2 = SiameseNet::init(&train_cfg.encoder, Rng::derive(base, 2).next_u64())?;
        let mut o2 = OptState::lars(lars, &n2.store);
        restore_net(
            &mut n2,
            &mut o2,
            &meta.nets[1],
            &mut reader,
            meta.step_counts.get(1).copied().unwrap_or(0),
        )?;
        (Some(n2), Some(o2))
    } else {
        (None, None)
    };

    Ok((
        CoTrainState {
            net1,
            net2,
            gmm1: meta.gmm1,
            gmm2: meta.gmm2,
            opt1,
            opt2,
            epoch: meta.epoch,
            best_val_auc: meta.best_val_auc,
            config: train_cfg,
        },
        experiment,
    ))
}
