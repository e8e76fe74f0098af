//! On-disk dataset format.
//!
//! A dataset directory holds `manifest.json` plus one little-endian f32 blob
//! per registered image. Patches are never duplicated on disk: pair and
//! labeled-patch records address tiles by grid position, and the loader
//! re-materializes pixels on demand.

use super::sampling::{LabeledPatchRecord, SampledPair};
use super::{Image, Lesion, RegisteredCase, Side, Split};
use crate::config::{SynthConfig, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::nn::patch_tensor;
use crate::real::Real;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CaseRecord {
    pub case_id: usize,
    pub split: Split,
    pub lesions: Vec<Lesion>,
    pub recovered_shift: (i32, i32),
    pub moving: Side,
    pub p1_file: String,
    pub p2_file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PairRecord {
    pub pair_id: usize,
    pub case_id: usize,
    pub row: usize,
    pub col: usize,
    pub a: f64,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: SynthConfig,
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub cases: Vec<CaseRecord>,
    pub pairs: Vec<PairRecord>,
    pub labeled: Vec<LabeledPatchRecord>,
}

fn write_image_blob(path: &Path, img: &Image) -> Result<()> {
    let mut bytes = Vec::with_capacity(img.pixels.len() * 4);
    for v in &img.pixels {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

fn read_image_blob(path: &Path, height: usize, width: usize) -> Result<Image> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() != height * width * 4 {
        return Err(Error::data(format!(
            "image blob {} has {} bytes, expected {}",
            path.display(),
            bytes.len(),
            height * width * 4
        )));
    }
    let pixels = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Image {
        height,
        width,
        pixels,
    })
}

/// Write a dataset directory. Refuses to overwrite an existing dataset
/// unless `force` is set.
pub fn write_dataset(
    dir: &Path,
    cfg: &SynthConfig,
    cases: &[RegisteredCase],
    case_splits: &[(usize, Split)],
    pairs: &[SampledPair],
    labeled: &[LabeledPatchRecord],
    force: bool,
) -> Result<DatasetManifest> {
    let manifest_path = dir.join("manifest.json");
    if manifest_path.exists() && !force {
        return Err(Error::data(format!(
            "output directory {} already holds a dataset (use --force to overwrite)",
            dir.display()
        )));
    }
    fs::create_dir_all(dir.join("images"))?;

    let split_of = |case_id: usize| -> Split {
        case_splits
            .iter()
            .find(|(id, _)| *id == case_id)
            .map(|(_, s)| *s)
            .unwrap_or(Split::Train)
    };

    let mut case_records = Vec::with_capacity(cases.len());
    for case in cases {
        let p1_file = format!("images/case_{:05}_p1.f32", case.case_id);
        let p2_file = format!("images/case_{:05}_p2.f32", case.case_id);
        write_image_blob(&dir.join(&p1_file), &case.p1)?;
        write_image_blob(&dir.join(&p2_file), &case.p2)?;
        case_records.push(CaseRecord {
            case_id: case.case_id,
            split: split_of(case.case_id),
            lesions: case.lesions.clone(),
            recovered_shift: case.recovered_shift,
            moving: case.moving,
            p1_file,
            p2_file,
        });
    }

    let pair_records: Vec<PairRecord> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| PairRecord {
            pair_id: i,
            case_id: p.case_id,
            row: p.row,
            col: p.col,
            a: p.a,
            split: split_of(p.case_id),
        })
        .collect();

    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        config: cfg.clone(),
        height: cfg.height,
        width: cfg.width,
        patch_size: cfg.patch_size,
        cases: case_records,
        pairs: pair_records,
        labeled: labeled.to_vec(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, json)?;
    Ok(manifest)
}

/// In-memory dataset: manifest plus the registered image pairs.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    images: Vec<(usize, Image, Image)>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest_path = dir.join("manifest.json");
        let json = fs::read_to_string(&manifest_path).map_err(|e| {
            Error::data(format!("cannot read {}: {e}", manifest_path.display()))
        })?;
        let manifest: DatasetManifest = serde_json::from_str(&json)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::data(format!(
                "dataset format version {} does not match supported version {}",
                manifest.format_version, FORMAT_VERSION
            )));
        }
        let mut images = Vec::with_capacity(manifest.cases.len());
        for case in &manifest.cases {
            let p1 = read_image_blob(&dir.join(&case.p1_file), manifest.height, manifest.width)?;
            let p2 = read_image_blob(&dir.join(&case.p2_file), manifest.height, manifest.width)?;
            images.push((case.case_id, p1, p2));
        }
        Ok(Dataset { manifest, images })
    }

    fn case_images(&self, case_id: usize) -> Result<(&Image, &Image)> {
        self.images
            .iter()
            .find(|(id, _, _)| *id == case_id)
            .map(|(_, a, b)| (a, b))
            .ok_or_else(|| Error::data(format!("case {case_id} missing from dataset")))
    }

    /// Re-materialize the two patches of a pair as encoder inputs.
    pub fn pair_patches<F: Real>(&self, pair: &PairRecord) -> Result<(Tensor<F>, Tensor<F>)> {
        let s = self.manifest.patch_size;
        let (img1, img2) = self.case_images(pair.case_id)?;
        let t1 = img1.tile(pair.col * s, pair.row * s, s);
        let t2 = img2.tile(pair.col * s, pair.row * s, s);
        Ok((
            patch_tensor(s, t1.iter().map(|&v| F::from_f64(v as f64)).collect())?,
            patch_tensor(s, t2.iter().map(|&v| F::from_f64(v as f64)).collect())?,
        ))
    }

    /// Re-materialize a labeled single patch.
    pub fn labeled_patch<F: Real>(&self, rec: &LabeledPatchRecord) -> Result<Tensor<F>> {
        let s = self.manifest.patch_size;
        let (img1, img2) = self.case_images(rec.case_id)?;
        let img = if rec.image == 1 { img1 } else { img2 };
        let t = img.tile(rec.x0, rec.y0, s);
        patch_tensor(s, t.iter().map(|&v| F::from_f64(v as f64)).collect())
    }

    pub fn pairs_in_split(&self, split: Split) -> Vec<&PairRecord> {
        self.manifest
            .pairs
            .iter()
            .filter(|p| p.split == split)
            .collect()
    }

    pub fn labeled_in_split(&self, split: Split) -> Vec<&LabeledPatchRecord> {
        self.manifest
            .labeled
            .iter()
            .filter(|p| p.split == split)
            .collect()
    }
}

/// Generate, register, sample, split, and write a full dataset directory.
pub fn synthesize_dataset(cfg: &SynthConfig, dir: &Path, force: bool) -> Result<DatasetManifest> {
    cfg.validate()?;
    let mut registered = Vec::with_capacity(cfg.cases);
    let mut pairs = Vec::new();
    for case_id in 0..cfg.cases {
        let seed = crate::rng::Rng::derive(cfg.seed, case_id as u64).next_u64();
        let case = super::generate_case(case_id, seed, cfg)?;
        let reg = super::register_pair(&case, cfg.register_search)?;
        pairs.extend(super::sample_pairs(&reg, cfg)?);
        registered.push(reg);
    }
    let ids: Vec<usize> = registered.iter().map(|c| c.case_id).collect();
    let case_splits = super::make_splits(&ids, cfg.seed)?;
    let labeled = super::sampling::labeled_patches(&registered, &case_splits, cfg)?;
    write_dataset(dir, cfg, &registered, &case_splits, &pairs, &labeled, force)
}

pub fn dataset_dir_manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}
