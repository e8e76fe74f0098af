//! Grid pair sampling, the abnormal-area overlap metric, and splits.

use super::{BBox, RegisteredCase, Split};
use crate::config::SynthConfig;
use crate::error::{Error, Result};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

/// Overlap between a patch tile and a region box, normalized by the smaller
/// of the two areas. Zero whenever the boxes do not overlap in either axis
/// (both clipped extents must be positive for sufficient overlap to count).
pub fn abnormal_area(patch: &BBox, roi: &BBox) -> Result<f64> {
    if patch.x_min >= patch.x_max || patch.y_min >= patch.y_max {
        return Err(Error::config("degenerate patch rectangle"));
    }
    if roi.x_min >= roi.x_max || roi.y_min >= roi.y_max {
        return Err(Error::config("degenerate roi rectangle"));
    }
    let ow = patch.x_max.min(roi.x_max) - patch.x_min.max(roi.x_min);
    let oh = patch.y_max.min(roi.y_max) - patch.y_min.max(roi.y_min);
    if ow <= 0 || oh <= 0 {
        return Ok(0.0);
    }
    let denom = patch.area().min(roi.area());
    Ok((ow * oh) as f64 / denom as f64)
}

/// A sampled grid pair: tile coordinates plus its abnormal-area value.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SampledPair {
    pub case_id: usize,
    pub row: usize,
    pub col: usize,
    pub a: f64,
}

fn background_fraction(tile: &[f32]) -> f64 {
    let zeros = tile.iter().filter(|&&p| p == 0.0).count();
    zeros as f64 / tile.len() as f64
}

fn mask_disagreement(t1: &[f32], t2: &[f32]) -> f64 {
    let differs = t1
        .iter()
        .zip(t2)
        .filter(|(&a, &b)| (a > 0.0) != (b > 0.0))
        .count();
    differs as f64 / t1.len() as f64
}

/// Tile the registered pair on a non-overlapping grid, dropping tiles that
/// are mostly background in either patch or whose tissue masks disagree too
/// much, and label survivors with the max overlap against any lesion box.
pub fn sample_pairs(case: &RegisteredCase, cfg: &SynthConfig) -> Result<Vec<SampledPair>> {
    let s = cfg.patch_size;
    let rows = case.p1.height / s;
    let cols = case.p1.width / s;
    let mut out = Vec::new();
    for row in 0..rows {
        for col in 0..cols {
            let t1 = case.p1.tile(col * s, row * s, s);
            let t2 = case.p2.tile(col * s, row * s, s);
            if background_fraction(&t1) > cfg.background_max_frac
                || background_fraction(&t2) > cfg.background_max_frac
            {
                continue;
            }
            if mask_disagreement(&t1, &t2) > cfg.mask_disagree_max_frac {
                continue;
            }
            let tile_box = BBox::new(
                (col * s) as i64,
                ((col + 1) * s) as i64,
                (row * s) as i64,
                ((row + 1) * s) as i64,
            )?;
            let mut a = 0.0f64;
            for lesion in &case.lesions {
                a = a.max(abnormal_area(&tile_box, &lesion.bbox)?);
            }
            out.push(SampledPair {
                case_id: case.case_id,
                row,
                col,
                a,
            });
        }
    }
    Ok(out)
}

/// Partition case ids into train/val/test at 8:1:1 by seeded shuffle.
pub fn make_splits(case_ids: &[usize], seed: u64) -> Result<Vec<(usize, Split)>> {
    let n = case_ids.len();
    if n < 10 {
        return Err(Error::data(format!(
            "patient-level 8:1:1 split needs at least 10 cases, got {n}"
        )));
    }
    let mut order: Vec<usize> = case_ids.to_vec();
    let mut rng = Rng::derive(seed, 0x5711);
    rng.shuffle(&mut order);
    let n_test = n / 10;
    let n_val = n / 10;
    let mut out: Vec<(usize, Split)> = Vec::with_capacity(n);
    for (i, id) in order.into_iter().enumerate() {
        let split = if i < n_test {
            Split::Test
        } else if i < n_test + n_val {
            Split::Val
        } else {
            Split::Train
        };
        out.push((id, split));
    }
    out.sort_by_key(|&(id, _)| id);
    Ok(out)
}

/// Labeled single-patch record for downstream tasks: a lesion-centered
/// abnormal patch plus a background patch from the other image at the same
/// location.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LabeledPatchRecord {
    pub id: usize,
    pub case_id: usize,
    /// 1 = lesion-side image, 2 = contralateral image of the aligned pair.
    pub image: u8,
    pub x0: usize,
    pub y0: usize,
    pub label_binary: u8,
    /// 0 background, 1 low-contrast lesion, 2 high-contrast lesion.
    pub label_multi: u8,
    pub split: Split,
}

/// Build the labeled patch set. With the leakage guard on, patches inherit
/// their case's pretraining split; otherwise they are shuffled 8:1:1 at
/// patch level.
pub fn labeled_patches(
    cases: &[RegisteredCase],
    case_splits: &[(usize, Split)],
    cfg: &SynthConfig,
) -> Result<Vec<LabeledPatchRecord>> {
    let s = cfg.patch_size;
    let split_of = |case_id: usize| -> Split {
        case_splits
            .iter()
            .find(|(id, _)| *id == case_id)
            .map(|(_, sp)| *sp)
            .unwrap_or(Split::Train)
    };
    let mut out = Vec::new();
    let mut next_id = 0usize;
    for case in cases {
        for lesion in &case.lesions {
            let cx = (lesion.bbox.x_min + lesion.bbox.x_max) / 2;
            let cy = (lesion.bbox.y_min + lesion.bbox.y_max) / 2;
            let x0 = (cx - (s as i64) / 2)
                .clamp(0, (case.p1.width - s) as i64) as usize;
            let y0 = (cy - (s as i64) / 2)
                .clamp(0, (case.p1.height - s) as i64) as usize;
            let (lesion_img, normal_img) = match lesion.side {
                super::Side::Left => (1u8, 2u8),
                super::Side::Right => (2u8, 1u8),
            };
            let split = split_of(case.case_id);
            out.push(LabeledPatchRecord {
                id: next_id,
                case_id: case.case_id,
                image: lesion_img,
                x0,
                y0,
                label_binary: 1,
                label_multi: lesion.class(),
                split,
            });
            next_id += 1;
            out.push(LabeledPatchRecord {
                id: next_id,
                case_id: case.case_id,
                image: normal_img,
                x0,
                y0,
                label_binary: 0,
                label_multi: 0,
                split,
            });
            next_id += 1;
        }
    }
    if !cfg.leakage_guard {
        // patch-level 8:1:1 shuffle, ignoring case membership
        let mut order: Vec<usize> = (0..out.len()).collect();
        let mut rng = Rng::derive(cfg.seed, 0x1A8E);
        rng.shuffle(&mut order);
        let n = out.len();
        let n_test = n / 10;
        let n_val = n / 10;
        for (rank, idx) in order.into_iter().enumerate() {
            out[idx].split = if rank < n_test {
                Split::Test
            } else if rank < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
        }
    }
    Ok(out)
}
