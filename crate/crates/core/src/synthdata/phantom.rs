//! Phantom case generation.
//!
//! Each case is built from one shared low-frequency tissue texture inside a
//! half-ellipse "breast" mask anchored to the chest-wall edge. The left
//! image is the texture plus independent noise; the right image is the
//! mirrored texture, translated by a small planted misalignment, with its
//! own noise. Lesions are smooth bright blobs added to exactly one side.

use super::{BBox, Image, Lesion, PhantomCase, Side};
use crate::config::SynthConfig;
use crate::error::Result;
use crate::rng::Rng;

/// Minimum tissue pixel value; keeps the mask recoverable as `pixel > 0`.
const TISSUE_FLOOR: f32 = 0.02;

/// Spacing of the fine-grain value-noise lattice, in pixels. The grain
/// gives the tissue texture energy at a scale the shift search can lock
/// onto; a smooth field alone leaves the correlation peak too flat.
const GRAIN_SPACING: f64 = 6.0;

struct TextureField {
    comps: Vec<(f64, f64, f64, f64)>, // (amp, fx, fy, phase)
    grain_seed: u64,
    grain_amp: f64,
}

fn lattice_value(seed: u64, ix: i64, iy: i64) -> f64 {
    let mut z = seed
        ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

impl TextureField {
    fn sample(rng: &mut Rng, amplitude: f64) -> Self {
        let comps = (0..6)
            .map(|j| {
                let amp = amplitude / (1.0 + 0.4 * j as f64);
                let fx = rng.range(0.5, 3.0);
                let fy = rng.range(0.5, 3.0);
                let phase = rng.range(0.0, std::f64::consts::TAU);
                (amp, fx, fy, phase)
            })
            .collect();
        TextureField {
            comps,
            grain_seed: rng.next_u64(),
            grain_amp: 0.5 * amplitude,
        }
    }

    fn at(&self, u: f64, v: f64) -> f64 {
        let mut s = 0.5;
        for &(amp, fx, fy, phase) in &self.comps {
            s += amp * (std::f64::consts::TAU * (fx * u + fy * v) + phase).cos();
        }
        s
    }

    /// Bilinear value noise on a coarse lattice, evaluated at pixel (x, y).
    fn grain(&self, x: f64, y: f64) -> f64 {
        let gx = x / GRAIN_SPACING;
        let gy = y / GRAIN_SPACING;
        let (ix, iy) = (gx.floor() as i64, gy.floor() as i64);
        let (fx, fy) = (gx - ix as f64, gy - iy as f64);
        let v00 = lattice_value(self.grain_seed, ix, iy);
        let v10 = lattice_value(self.grain_seed, ix + 1, iy);
        let v01 = lattice_value(self.grain_seed, ix, iy + 1);
        let v11 = lattice_value(self.grain_seed, ix + 1, iy + 1);
        let top = v00 + (v10 - v00) * fx;
        let bot = v01 + (v11 - v01) * fx;
        self.grain_amp * (top + (bot - top) * fy)
    }
}

/// Half-ellipse tissue mask anchored at x = 0; returns the normalized
/// radial coordinate (< 1 inside).
fn ellipse_rho(cfg: &SynthConfig, x: usize, y: usize) -> f64 {
    if cfg.full_field {
        return 0.0;
    }
    let a = 0.88 * cfg.width as f64;
    let b = 0.42 * cfg.height as f64;
    let cy = cfg.height as f64 / 2.0;
    let fx = (x as f64 + 0.5) / a;
    let fy = (y as f64 + 0.5 - cy) / b;
    (fx * fx + fy * fy).sqrt()
}

fn base_texture(cfg: &SynthConfig, field: &TextureField) -> Image {
    let mut img = Image::zeros(cfg.height, cfg.width);
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let rho = ellipse_rho(cfg, x, y);
            if rho >= 1.0 {
                continue;
            }
            let u = x as f64 / cfg.width as f64;
            let v = y as f64 / cfg.height as f64;
            // denser tissue toward the chest wall
            let shade = 0.6 + 0.4 * (1.0 - rho);
            let val = (field.at(u, v) * shade + field.grain(x as f64, y as f64))
                .clamp(TISSUE_FLOOR as f64, 0.9);
            img.set(x, y, val as f32);
        }
    }
    img
}

fn add_noise(img: &mut Image, rng: &mut Rng, sigma: f64) {
    for p in img.pixels.iter_mut() {
        if *p > 0.0 {
            let v = *p as f64 + sigma * rng.normal();
            *p = v.clamp(TISSUE_FLOOR as f64, 1.0) as f32;
        }
    }
}

/// Smooth low-frequency field private to one side: normal tissue asymmetry.
/// Keeps background pixels untouched.
fn add_asymmetry(img: &mut Image, rng: &mut Rng, amplitude: f64) {
    if amplitude == 0.0 {
        return;
    }
    // very low frequency: within one patch the asymmetry is close to a DC
    // offset, the way broad density differences look between real sides
    let comps: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|j| {
            (
                amplitude / (1.0 + 0.5 * j as f64),
                rng.range(0.3, 1.2),
                rng.range(0.3, 1.2),
                rng.range(0.0, std::f64::consts::TAU),
            )
        })
        .collect();
    let (h, w) = (img.height, img.width);
    for y in 0..h {
        for x in 0..w {
            if !img.in_tissue(x, y) {
                continue;
            }
            let u = x as f64 / w as f64;
            let v = y as f64 / h as f64;
            let mut delta = 0.0;
            for &(amp, fx, fy, phase) in &comps {
                delta += amp * (std::f64::consts::TAU * (fx * u + fy * v) + phase).cos();
            }
            let val = (img.get(x, y) as f64 + delta).clamp(TISSUE_FLOOR as f64, 1.0);
            img.set(x, y, val as f32);
        }
    }
}

/// Add a truncated Gaussian blob inside `bbox`; pixels outside the tissue
/// mask stay background.
fn add_blob(img: &mut Image, bbox: &BBox, contrast: f64) {
    let cx = (bbox.x_min + bbox.x_max) as f64 / 2.0;
    let cy = (bbox.y_min + bbox.y_max) as f64 / 2.0;
    let r = (bbox.width().min(bbox.height())) as f64 / 2.0;
    let sigma = (r / 2.0).max(1.0);
    for y in bbox.y_min.max(0)..bbox.y_max.min(img.height as i64) {
        for x in bbox.x_min.max(0)..bbox.x_max.min(img.width as i64) {
            let (xu, yu) = (x as usize, y as usize);
            if !img.in_tissue(xu, yu) {
                continue;
            }
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            // super-Gaussian: a smooth plateau with a well-defined rim, the
            // way a mass stands out from its surroundings
            let rho2 = (dx * dx + dy * dy) / (2.0 * sigma * sigma);
            let gain = contrast * (-rho2 * rho2).exp();
            let v = (img.get(xu, yu) as f64 + gain).min(1.0);
            img.set(xu, yu, v as f32);
        }
    }
}

fn bbox_fits(img: &Image, bbox: &BBox) -> bool {
    if bbox.x_min < 0
        || bbox.y_min < 0
        || bbox.x_max > img.width as i64
        || bbox.y_max > img.height as i64
    {
        return false;
    }
    // all four corners and the center must land on tissue
    let probes = [
        (bbox.x_min, bbox.y_min),
        (bbox.x_max - 1, bbox.y_min),
        (bbox.x_min, bbox.y_max - 1),
        (bbox.x_max - 1, bbox.y_max - 1),
        ((bbox.x_min + bbox.x_max) / 2, (bbox.y_min + bbox.y_max) / 2),
    ];
    probes
        .iter()
        .all(|&(x, y)| img.in_tissue(x as usize, y as usize))
}

/// Generate one deterministic phantom case from a per-case seed.
pub fn generate_case(case_id: usize, seed: u64, cfg: &SynthConfig) -> Result<PhantomCase> {
    cfg.validate()?;
    let mut rng = Rng::derive(seed, 0xCA5E);
    let field = TextureField::sample(&mut rng, cfg.texture_amplitude);
    let texture = base_texture(cfg, &field);

    let planted_shift = (
        rng.range_i32(-cfg.max_shift, cfg.max_shift),
        rng.range_i32(-cfg.max_shift, cfg.max_shift),
    );

    let mut left = texture.clone();
    // flipped-right frame: texture moved by the planted shift
    let mut right_aligned_frame = texture.translate(planted_shift.0, planted_shift.1);

    // normal bilateral variation, independent per side
    add_asymmetry(&mut left, &mut rng, cfg.asymmetry_amplitude);
    add_asymmetry(&mut right_aligned_frame, &mut rng, cfg.asymmetry_amplitude);

    let mut lesions = Vec::new();
    if cfg.lesion_probability > 0.0 && rng.chance(cfg.lesion_probability) {
        let mut count = 1 + if cfg.max_lesions > 1 && rng.chance(0.35) { 1 } else { 0 };
        count = count.min(cfg.max_lesions.max(1));
        let side = if rng.chance(0.5) { Side::Left } else { Side::Right };
        while count > 0 {
            let target = match side {
                Side::Left => &left,
                Side::Right => &right_aligned_frame,
            };
            let mut placed = None;
            for _ in 0..100 {
                let r = rng.range(cfg.lesion_radius_min, cfg.lesion_radius_max);
                let ri = r.ceil() as i64;
                let cx = rng.range_i32(ri as i32, cfg.width as i32 - 1 - ri as i32) as i64;
                let cy = rng.range_i32(ri as i32, cfg.height as i32 - 1 - ri as i32) as i64;
                let bbox = BBox::new(cx - ri, cx + ri, cy - ri, cy + ri)?;
                if bbox_fits(target, &bbox) {
                    let contrast_factor = rng.range(0.5, 1.0);
                    placed = Some(Lesion {
                        side,
                        bbox,
                        contrast_factor,
                        contrast: contrast_factor * cfg.lesion_contrast,
                    });
                    break;
                }
            }
            match placed {
                Some(lesion) => {
                    let target = match side {
                        Side::Left => &mut left,
                        Side::Right => &mut right_aligned_frame,
                    };
                    add_blob(target, &lesion.bbox, lesion.contrast);
                    lesions.push(lesion);
                    count -= 1;
                }
                None => {
                    // could not fit: reduce the requested lesion count
                    count -= 1;
                }
            }
        }
    }

    add_noise(&mut left, &mut rng, cfg.noise_sigma);
    add_noise(&mut right_aligned_frame, &mut rng, cfg.noise_sigma);

    Ok(PhantomCase {
        case_id,
        left,
        right: right_aligned_frame.mirror(),
        lesions,
        planted_shift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SynthConfig {
        SynthConfig {
            cases: 10,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_regeneration() {
        let a = generate_case(3, 42, &cfg()).unwrap();
        let b = generate_case(3, 42, &cfg()).unwrap();
        assert_eq!(a.left.pixels, b.left.pixels);
        assert_eq!(a.right.pixels, b.right.pixels);
        assert_eq!(a.lesions, b.lesions);
        assert_eq!(a.planted_shift, b.planted_shift);
    }

    #[test]
    fn zero_probability_yields_no_lesions_and_mirrored_sides() {
        let mut c = cfg();
        c.lesion_probability = 0.0;
        c.noise_sigma = 0.0;
        c.asymmetry_amplitude = 0.0;
        c.max_shift = 0;
        let case = generate_case(0, 9, &c).unwrap();
        assert!(case.lesions.is_empty());
        // with no noise and no shift the flipped right equals the left
        let flipped = case.right.mirror();
        assert_eq!(case.left.pixels, flipped.pixels);
    }

    #[test]
    fn zero_contrast_records_box_without_changing_pixels() {
        let mut c = cfg();
        c.lesion_probability = 1.0;
        c.lesion_contrast = 0.0;
        c.noise_sigma = 0.0;
        let case = generate_case(1, 7, &c).unwrap();
        assert!(!case.lesions.is_empty());
        // regenerate with lesions suppressed entirely: pixels identical
        // because a zero-contrast blob adds nothing
        for l in &case.lesions {
            assert_eq!(l.contrast, 0.0);
        }
        let mut c2 = c.clone();
        c2.lesion_probability = 1.0;
        let again = generate_case(1, 7, &c2).unwrap();
        assert_eq!(case.left.pixels, again.left.pixels);
    }

    #[test]
    fn lesions_all_on_one_side_inside_bounds() {
        let mut c = cfg();
        c.lesion_probability = 1.0;
        for seed in 0..20u64 {
            let case = generate_case(seed as usize, seed, &c).unwrap();
            if case.lesions.is_empty() {
                continue;
            }
            let side = case.lesions[0].side;
            for l in &case.lesions {
                assert_eq!(l.side, side);
                assert!(l.bbox.x_min >= 0 && l.bbox.x_max <= c.width as i64);
                assert!(l.bbox.y_min >= 0 && l.bbox.y_max <= c.height as i64);
            }
        }
    }

    #[test]
    fn background_is_exactly_zero_and_tissue_positive() {
        let case = generate_case(5, 123, &cfg()).unwrap();
        let any_bg = case.left.pixels.iter().any(|&p| p == 0.0);
        assert!(any_bg, "half-ellipse mask should leave background");
        for &p in &case.left.pixels {
            assert!(p == 0.0 || p >= TISSUE_FLOOR);
            assert!(p <= 1.0);
        }
    }
}
