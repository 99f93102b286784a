//! Binary PPM (P6) image output and PGM (P5) feature-map dumps.

use std::io::Write;

use crate::error::{contract, Result};
use crate::tensor::Tensor4;

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write batch element `b` of a 3-channel tensor as binary PPM. Values are
/// clamped to [0, 1] and quantized to 8 bits.
pub fn write_ppm(image: &Tensor4, b: usize, out: &mut impl Write) -> Result<()> {
    if image.channels() != 3 {
        return Err(contract("PPM output needs exactly 3 channels"));
    }
    if b >= image.batch() {
        return Err(contract("batch index out of range"));
    }
    let (h, w) = (image.height(), image.width());
    write!(out, "P6\n{w} {h}\n255\n")?;
    let mut row = Vec::with_capacity(3 * w);
    for y in 0..h {
        row.clear();
        for x in 0..w {
            for c in 0..3 {
                row.push(to_byte(image.get(b, c, y, x)));
            }
        }
        out.write_all(&row)?;
    }
    Ok(())
}

/// Write a single-channel gray map as binary PGM.
pub fn write_pgm(gray: &[f64], height: usize, width: usize, out: &mut impl Write) -> Result<()> {
    if gray.len() != height * width {
        return Err(contract("gray buffer does not match dimensions"));
    }
    write!(out, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = gray.iter().map(|&v| to_byte(v)).collect();
    out.write_all(&bytes)?;
    Ok(())
}

/// Per-channel mean of batch element `b`, min-max normalized to [0, 1] and
/// encoded as PGM bytes — the qualitative feature-map dump format.
pub fn channel_mean_pgm(x: &Tensor4, b: usize) -> Result<Vec<u8>> {
    if b >= x.batch() {
        return Err(contract("batch index out of range"));
    }
    let (h, w) = (x.height(), x.width());
    let mut mean = vec![0.0f64; h * w];
    for c in 0..x.channels() {
        for y in 0..h {
            for xx in 0..w {
                mean[y * w + xx] += x.get(b, c, y, xx);
            }
        }
    }
    let n = x.channels() as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &mean {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = if hi > lo { hi - lo } else { 1.0 };
    mean.iter_mut().for_each(|v| *v = (*v - lo) / range);
    let mut out = Vec::new();
    write_pgm(&mean, h, w, &mut out)?;
    Ok(out)
}
