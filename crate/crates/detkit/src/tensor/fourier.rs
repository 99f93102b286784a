//! Exact 2-D discrete Fourier transform pair over the spatial plane.
//!
//! Convention: unnormalized forward transform, inverse carries the 1/(H·W)
//! factor. Each (batch, channel) plane is transformed independently by
//! row-column decomposition; power-of-two lengths take a radix-2 FFT and
//! everything else falls back to the direct O(n²) sum, which is plenty at
//! desk scale.

use num_complex::Complex64;
use std::f64::consts::PI;

use super::{ComplexTensor4, Tensor4};

/// Forward 2-D DFT per (batch, channel) plane.
pub fn dft2(x: &Tensor4) -> ComplexTensor4 {
    let complex: Vec<Complex64> = x.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_planes(
        x.shape(),
        complex,
        Direction::Forward,
    )
}

/// Inverse 2-D DFT, the exact inverse of [`dft2`] including the 1/(H·W) factor.
pub fn idft2(xf: &ComplexTensor4) -> ComplexTensor4 {
    let mut out = transform_planes(xf.shape(), xf.values().to_vec(), Direction::Inverse);
    let (_, _, h, w) = xf.shape();
    let norm = 1.0 / (h * w) as f64;
    out.values.iter_mut().for_each(|v| *v *= norm);
    out
}

#[derive(Clone, Copy, PartialEq)]
enum Direction {
    Forward,
    Inverse,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Forward => -1.0,
            Direction::Inverse => 1.0,
        }
    }
}

fn transform_planes(
    shape: (usize, usize, usize, usize),
    mut values: Vec<Complex64>,
    dir: Direction,
) -> ComplexTensor4 {
    let (b, c, h, w) = shape;
    let plane = h * w;
    let mut row = vec![Complex64::default(); w];
    let mut col = vec![Complex64::default(); h];
    for p in 0..b * c {
        let base = p * plane;
        for r in 0..h {
            row.copy_from_slice(&values[base + r * w..base + (r + 1) * w]);
            dft_1d(&mut row, dir);
            values[base + r * w..base + (r + 1) * w].copy_from_slice(&row);
        }
        for cidx in 0..w {
            for r in 0..h {
                col[r] = values[base + r * w + cidx];
            }
            dft_1d(&mut col, dir);
            for r in 0..h {
                values[base + r * w + cidx] = col[r];
            }
        }
    }
    ComplexTensor4::new(b, c, h, w, values).expect("transform preserves shape")
}

fn dft_1d(data: &mut [Complex64], dir: Direction) {
    let n = data.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        fft_radix2(data, dir);
    } else {
        dft_naive(data, dir);
    }
}

fn dft_naive(data: &mut [Complex64], dir: Direction) {
    let n = data.len();
    let input = data.to_vec();
    let base = dir.sign() * 2.0 * PI / n as f64;
    for (k, out) in data.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, &v) in input.iter().enumerate() {
            let angle = base * (k * j % n) as f64;
            acc += v * Complex64::new(angle.cos(), angle.sin());
        }
        *out = acc;
    }
}

fn fft_radix2(data: &mut [Complex64], dir: Direction) {
    let n = data.len();
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            data.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let angle = dir.sign() * 2.0 * PI / len as f64;
        let wn = Complex64::new(angle.cos(), angle.sin());
        for start in (0..n).step_by(len) {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..len / 2 {
                let even = data[start + k];
                let odd = data[start + k + len / 2] * w;
                data[start + k] = even + odd;
                data[start + k + len / 2] = even - odd;
                w *= wn;
            }
        }
        len <<= 1;
    }
}
