//! Aspect-preserving resize of the longer side to a target resolution,
//! padded to a square with gray borders, plus the affine record that maps
//! boxes between original and letterboxed coordinates.

use crate::error::{contract, Result};
use crate::loss::BoxCwh;
use crate::tensor::Tensor4;

/// Gray padding value (114/255, the usual letterbox border).
pub const PAD_VALUE: f64 = 114.0 / 255.0;

/// Affine mapping from original to letterboxed coordinates:
/// x' = x·scale + pad_x, y' = y·scale + pad_y.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LetterboxTransform {
    pub scale: f64,
    pub pad_x: f64,
    pub pad_y: f64,
    pub orig_width: usize,
    pub orig_height: usize,
    pub target: usize,
}

impl LetterboxTransform {
    /// Map a box from original-image coordinates into the letterboxed frame.
    pub fn apply_box(&self, b: &BoxCwh) -> Result<BoxCwh> {
        BoxCwh::new(
            b.cx() * self.scale + self.pad_x,
            b.cy() * self.scale + self.pad_y,
            b.w() * self.scale,
            b.h() * self.scale,
        )
    }

    /// Exact inverse of [`Self::apply_box`] up to rounding.
    pub fn invert_box(&self, b: &BoxCwh) -> Result<BoxCwh> {
        BoxCwh::new(
            (b.cx() - self.pad_x) / self.scale,
            (b.cy() - self.pad_y) / self.scale,
            b.w() / self.scale,
            b.h() / self.scale,
        )
    }
}

/// Bilinear sample with pixel-center alignment, clamped at the borders.
fn sample_bilinear(x: &Tensor4, b: usize, c: usize, sy: f64, sx: f64) -> f64 {
    let h = x.height() as isize;
    let w = x.width() as isize;
    let clamp = |v: isize, hi: isize| v.clamp(0, hi - 1) as usize;
    let (y0, x0) = (sy.floor(), sx.floor());
    let (fy, fx) = (sy - y0, sx - x0);
    let (y0i, x0i) = (y0 as isize, x0 as isize);
    let v00 = x.get(b, c, clamp(y0i, h), clamp(x0i, w));
    let v01 = x.get(b, c, clamp(y0i, h), clamp(x0i + 1, w));
    let v10 = x.get(b, c, clamp(y0i + 1, h), clamp(x0i, w));
    let v11 = x.get(b, c, clamp(y0i + 1, h), clamp(x0i + 1, w));
    v00 * (1.0 - fy) * (1.0 - fx) + v01 * (1.0 - fy) * fx + v10 * fy * (1.0 - fx) + v11 * fy * fx
}

/// Resize so the longer side equals `target` (bilinear), then pad to a
/// `target`×`target` square with symmetric gray borders (extra pixel goes to
/// the bottom/right). A `target`×`target` input passes through bit-identical
/// with an identity transform.
pub fn letterbox(image: &Tensor4, target: usize) -> Result<(Tensor4, LetterboxTransform)> {
    if target < 1 {
        return Err(contract("letterbox target must be >= 1"));
    }
    let (batch, channels, h, w) = image.shape();
    let scale = target as f64 / h.max(w) as f64;
    let new_h = ((h as f64 * scale).round() as usize).clamp(1, target);
    let new_w = ((w as f64 * scale).round() as usize).clamp(1, target);
    let pad_top = (target - new_h) / 2;
    let pad_left = (target - new_w) / 2;

    let out = Tensor4::from_fn(batch, channels, target, target, |b, c, y, x| {
        if y < pad_top || y >= pad_top + new_h || x < pad_left || x >= pad_left + new_w {
            return PAD_VALUE;
        }
        let (ry, rx) = (y - pad_top, x - pad_left);
        // Pixel-center mapping: exact identity when scale == 1.
        let sy = (ry as f64 + 0.5) * (h as f64 / new_h as f64) - 0.5;
        let sx = (rx as f64 + 0.5) * (w as f64 / new_w as f64) - 0.5;
        sample_bilinear(image, b, c, sy, sx)
    })?;

    Ok((
        out,
        LetterboxTransform {
            scale,
            pad_x: pad_left as f64,
            pad_y: pad_top as f64,
            orig_width: w,
            orig_height: h,
            target,
        },
    ))
}
