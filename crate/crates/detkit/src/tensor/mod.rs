//! Minimal dense-tensor substrate: rank-4 real and complex arrays in
//! (batch, channel, height, width) layout, plus the convolution, batch-norm,
//! pooling, concatenation, and Fourier-transform operations the higher-level
//! blocks are built from.
//!
//! All values are `f64`, stored row-major in (b, c, h, w) order. Tensors are
//! immutable after construction and validated on entry: every dimension is at
//! least 1 and every value is finite.

mod conv;
mod fourier;
mod io;

pub use conv::{
    activation, batchnorm_infer, concat_channels, conv2d, gap, split_channels, Activation,
    BatchNormParams, Conv2dParams,
};
pub use fourier::{dft2, idft2};
pub use io::{load_t4, read_t4, read_t4_bytes, save_t4, write_t4};

use num_complex::Complex64;

use crate::error::{contract, Result};

/// Dense rank-4 real tensor, the carrier for all feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Tensor4 {
    /// Build a tensor from raw values in (b, c, h, w) row-major order.
    ///
    /// Rejects zero dimensions, length mismatches, and non-finite values.
    pub fn new(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let len = checked_len(batch, channels, height, width)?;
        if values.len() != len {
            return Err(contract(format!(
                "value count {} does not match shape {}x{}x{}x{}",
                values.len(),
                batch,
                channels,
                height,
                width
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(contract("tensor values must be finite"));
        }
        Ok(Self {
            batch,
            channels,
            height,
            width,
            values,
        })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(batch: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        let len = checked_len(batch, channels, height, width)?;
        Ok(Self {
            batch,
            channels,
            height,
            width,
            values: vec![0.0; len],
        })
    }

    /// Constant tensor of the given shape.
    pub fn filled(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        value: f64,
    ) -> Result<Self> {
        let mut t = Self::zeros(batch, channels, height, width)?;
        if !value.is_finite() {
            return Err(contract("tensor values must be finite"));
        }
        t.values.fill(value);
        Ok(t)
    }

    /// Build a tensor by evaluating `f(b, c, h, w)` at every index.
    pub fn from_fn(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let len = checked_len(batch, channels, height, width)?;
        let mut values = Vec::with_capacity(len);
        for b in 0..batch {
            for c in 0..channels {
                for h in 0..height {
                    for w in 0..width {
                        values.push(f(b, c, h, w));
                    }
                }
            }
        }
        Self::new(batch, channels, height, width, values)
    }

    /// Uniformly random tensor in `[lo, hi)`, used by trials and demos.
    pub fn random(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        lo: f64,
        hi: f64,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        Self::from_fn(batch, channels, height, width, |_, _, _, _| {
            rng.gen_range(lo..hi)
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Shape as (batch, channels, height, width).
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.batch, self.channels, self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub(crate) fn index(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        ((b * self.channels + c) * self.height + h) * self.width + w
    }

    /// Value at (b, c, h, w). Panics on out-of-range indices like slice indexing.
    #[inline]
    pub fn get(&self, b: usize, c: usize, h: usize, w: usize) -> f64 {
        self.values[self.index(b, c, h, w)]
    }

    /// Elementwise map. The result is re-validated, so a map that produces a
    /// non-finite value is rejected rather than propagated.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.batch,
            self.channels,
            self.height,
            self.width,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Elementwise sum of two tensors of identical shape.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(contract(format!(
                "cannot add tensors of shapes {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Self::new(
            self.batch,
            self.channels,
            self.height,
            self.width,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    /// Elementwise scaling by a constant.
    pub fn scale(&self, s: f64) -> Result<Self> {
        self.map(|v| v * s)
    }

    /// Largest absolute value in the tensor (0 for the all-zero tensor).
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Dense rank-4 complex tensor; shape semantics identical to [`Tensor4`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor4 {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<Complex64>,
}

impl ComplexTensor4 {
    pub fn new(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<Complex64>,
    ) -> Result<Self> {
        let len = checked_len(batch, channels, height, width)?;
        if values.len() != len {
            return Err(contract(format!(
                "value count {} does not match shape {}x{}x{}x{}",
                values.len(),
                batch,
                channels,
                height,
                width
            )));
        }
        Ok(Self {
            batch,
            channels,
            height,
            width,
            values,
        })
    }

    pub fn zeros(batch: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        let len = checked_len(batch, channels, height, width)?;
        Ok(Self {
            batch,
            channels,
            height,
            width,
            values: vec![Complex64::new(0.0, 0.0); len],
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.batch, self.channels, self.height, self.width)
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    #[inline]
    pub(crate) fn index(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        ((b * self.channels + c) * self.height + h) * self.width + w
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, h: usize, w: usize) -> Complex64 {
        self.values[self.index(b, c, h, w)]
    }

    /// Real parts as a [`Tensor4`]. Fails if any real part is non-finite.
    pub fn real(&self) -> Result<Tensor4> {
        Tensor4::new(
            self.batch,
            self.channels,
            self.height,
            self.width,
            self.values.iter().map(|v| v.re).collect(),
        )
    }

    /// Largest absolute imaginary part.
    pub fn max_abs_imag(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.im.abs()))
    }

    /// Scale every value of channel (b, c) by a real factor.
    pub(crate) fn scale_channel(&mut self, b: usize, c: usize, factor: f64) {
        let start = self.index(b, c, 0, 0);
        let plane = self.height * self.width;
        for v in &mut self.values[start..start + plane] {
            *v *= factor;
        }
    }
}

fn checked_len(batch: usize, channels: usize, height: usize, width: usize) -> Result<usize> {
    if batch == 0 || channels == 0 || height == 0 || width == 0 {
        return Err(contract("all tensor dimensions must be >= 1"));
    }
    batch
        .checked_mul(channels)
        .and_then(|n| n.checked_mul(height))
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| contract("tensor shape overflows"))
}
