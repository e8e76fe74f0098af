//! Bilateral alignment by exhaustive integer-shift search.
//!
//! The right image is flipped into the left's orientation, then the shift
//! maximizing normalized cross-correlation over the joint tissue mask is
//! found by brute force. The lesion-bearing image is never resampled, so
//! recorded lesion boxes stay valid in the output frame.

use super::{Image, PhantomCase, RegisteredCase, Side};
use crate::error::{Error, Result};

/// Normalized cross-correlation of `a` against `b` translated by `(dx, dy)`,
/// over pixels where both images have tissue. Returns None when the overlap
/// is too small to normalize.
fn ncc_at(a: &Image, b: &Image, dx: i32, dy: i32) -> Option<f64> {
    let (h, w) = (a.height as i64, a.width as i64);
    let mut n = 0usize;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
    for y in 0..h {
        let sy = y - dy as i64;
        if sy < 0 || sy >= h {
            continue;
        }
        for x in 0..w {
            let sx = x - dx as i64;
            if sx < 0 || sx >= w {
                continue;
            }
            let av = a.get(x as usize, y as usize) as f64;
            let bv = b.get(sx as usize, sy as usize) as f64;
            if av <= 0.0 || bv <= 0.0 {
                continue;
            }
            n += 1;
            sa += av;
            sb += bv;
            saa += av * av;
            sbb += bv * bv;
            sab += av * bv;
        }
    }
    if n < 16 {
        return None;
    }
    let nf = n as f64;
    let cov = sab - sa * sb / nf;
    let va = saa - sa * sa / nf;
    let vb = sbb - sb * sb / nf;
    if va <= 0.0 || vb <= 0.0 {
        // constant overlap region: correlation undefined, call it perfect
        return Some(1.0);
    }
    Some(cov / (va * vb).sqrt())
}

/// Estimate the misalignment of the flipped right image relative to the
/// left and emit the aligned pair. Ties in the correlation score are broken
/// toward the smaller shift norm, then lexicographically on (dx, dy).
pub fn register_pair(case: &PhantomCase, search_radius: i32) -> Result<RegisteredCase> {
    if case.left.height != case.right.height || case.left.width != case.right.width {
        return Err(Error::config("bilateral images must share a shape"));
    }
    let flipped = case.right.mirror();

    let mut candidates: Vec<(i32, i32)> = Vec::new();
    for dy in -search_radius..=search_radius {
        for dx in -search_radius..=search_radius {
            candidates.push((dx, dy));
        }
    }
    candidates.sort_by_key(|&(dx, dy)| (dx as i64 * dx as i64 + dy as i64 * dy as i64, dx, dy));

    let mut best: Option<((i32, i32), f64)> = None;
    for &(dx, dy) in &candidates {
        // score alignment of left vs flipped-right shifted back by (dx,dy)
        if let Some(score) = ncc_at(&case.left, &flipped, -dx, -dy) {
            let better = match best {
                None => true,
                Some((_, s)) => score > s + 1e-12,
            };
            if better {
                best = Some(((dx, dy), score));
            }
        }
    }
    let (shift, _) = best.ok_or_else(|| {
        Error::data("registration found no overlapping tissue at any shift")
    })?;

    // The lesion-free image moves; the lesion frame stays fixed.
    let (p1, p2, moving) = match case.lesion_side() {
        Some(Side::Right) => (
            case.left.translate(shift.0, shift.1),
            flipped,
            Side::Left,
        ),
        _ => (
            case.left.clone(),
            flipped.translate(-shift.0, -shift.1),
            Side::Right,
        ),
    };

    Ok(RegisteredCase {
        case_id: case.case_id,
        p1,
        p2,
        lesions: case.lesions.clone(),
        recovered_shift: shift,
        moving,
    })
}
