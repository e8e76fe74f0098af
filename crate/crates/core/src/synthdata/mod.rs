//! Synthetic bilateral phantom data: generation, registration, grid pair
//! sampling with the abnormal-area overlap metric, patient-level splits,
//! and the on-disk dataset format.

pub mod manifest;
pub mod phantom;
pub mod register;
pub mod sampling;

pub use manifest::{Dataset, DatasetManifest};
pub use phantom::generate_case;
pub use register::register_pair;
pub use sampling::{abnormal_area, make_splits, sample_pairs};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Axis-aligned box over the integer pixel grid, half-open in both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: i64,
    pub x_max: i64,
    pub y_min: i64,
    pub y_max: i64,
}

impl BBox {
    pub fn new(x_min: i64, x_max: i64, y_min: i64, y_max: i64) -> Result<Self> {
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::config(format!(
                "degenerate rectangle ({x_min},{x_max})x({y_min},{y_max})"
            )));
        }
        Ok(BBox {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    pub fn width(&self) -> i64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> i64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> i64 {
        self.width() * self.height()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Lesion {
    pub side: Side,
    /// Box in the registered (common) frame.
    pub bbox: BBox,
    /// Per-lesion contrast multiplier in [0.5, 1.0].
    pub contrast_factor: f64,
    /// Effective peak brightness added.
    pub contrast: f64,
}

impl Lesion {
    /// Downstream class: background 0 is reserved for normal patches;
    /// lesions split into low-contrast 1 and high-contrast 2.
    pub fn class(&self) -> u8 {
        if self.contrast_factor >= 0.75 {
            2
        } else {
            1
        }
    }
}

/// Grayscale image in [0,1]; background pixels are exactly 0 and serve as
/// the tissue mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.pixels[y * self.width + x] = v;
    }

    #[inline]
    pub fn in_tissue(&self, x: usize, y: usize) -> bool {
        self.get(x, y) > 0.0
    }

    /// Horizontal mirror.
    pub fn mirror(&self) -> Image {
        let mut out = Image::zeros(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(self.width - 1 - x, y, self.get(x, y));
            }
        }
        out
    }

    /// Translate content by (dx, dy), zero-filling uncovered pixels.
    pub fn translate(&self, dx: i32, dy: i32) -> Image {
        let mut out = Image::zeros(self.height, self.width);
        for y in 0..self.height {
            let sy = y as i64 - dy as i64;
            if sy < 0 || sy >= self.height as i64 {
                continue;
            }
            for x in 0..self.width {
                let sx = x as i64 - dx as i64;
                if sx < 0 || sx >= self.width as i64 {
                    continue;
                }
                out.set(x, y, self.get(sx as usize, sy as usize));
            }
        }
        out
    }

    /// Copy an s-by-s tile with origin (x0, y0).
    pub fn tile(&self, x0: usize, y0: usize, s: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(s * s);
        for y in y0..y0 + s {
            out.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x0 + s]);
        }
        out
    }
}

/// One synthetic patient: a bilateral image pair with optional planted
/// lesions, all on a single side. `right` is stored in its native mirrored
/// orientation; lesion boxes are recorded in the orientation shared with
/// `left` (i.e. in flipped-right coordinates for right-side lesions).
#[derive(Debug, Clone)]
pub struct PhantomCase {
    pub case_id: usize,
    pub left: Image,
    pub right: Image,
    pub lesions: Vec<Lesion>,
    /// Generation metadata: true misalignment of the flipped right image
    /// relative to the left. Registration must recover it.
    pub planted_shift: (i32, i32),
}

impl PhantomCase {
    pub fn lesion_side(&self) -> Option<Side> {
        self.lesions.first().map(|l| l.side)
    }
}

/// A case after flip-and-shift alignment. `p1` derives from the left image,
/// `p2` from the right; both live on the same grid, and lesion boxes are
/// valid in this common frame (the lesion-bearing image is never shifted).
#[derive(Debug, Clone)]
pub struct RegisteredCase {
    pub case_id: usize,
    pub p1: Image,
    pub p2: Image,
    pub lesions: Vec<Lesion>,
    pub recovered_shift: (i32, i32),
    /// Which side was resampled during alignment.
    pub moving: Side,
}
