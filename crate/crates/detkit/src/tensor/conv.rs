//! 2-D convolution (standard / grouped / depthwise), inference batch norm,
//! activations, global average pooling, and channel concatenation/splitting.

use crate::error::{contract, Result};

use super::Tensor4;

/// Elementwise non-linearity applied after convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            Activation::Identity => v,
        }
    }
}

/// Weights and hyper-parameters of a 2-D convolution.
///
/// Weights are stored as a [`Tensor4`] of shape
/// (out_channels, in_channels_per_group, k_h, k_w); the declared input channel
/// count is `in_channels_per_group * groups`. Padding is zero padding, given
/// per axis as (pad_h, pad_w) so that strip kernels (1×k, k×1) can be padded
/// to preserve shape.
#[derive(Debug, Clone)]
pub struct Conv2dParams {
    weights: Tensor4,
    bias: Option<Vec<f64>>,
    stride: usize,
    pad_h: usize,
    pad_w: usize,
    groups: usize,
}

impl Conv2dParams {
    pub fn new(
        weights: Tensor4,
        bias: Option<Vec<f64>>,
        stride: usize,
        padding: (usize, usize),
        groups: usize,
    ) -> Result<Self> {
        if stride < 1 {
            return Err(contract("conv stride must be >= 1"));
        }
        if groups < 1 {
            return Err(contract("conv groups must be >= 1"));
        }
        let out_channels = weights.batch();
        if out_channels % groups != 0 {
            return Err(contract(format!(
                "out_channels {} not divisible by groups {}",
                out_channels, groups
            )));
        }
        if let Some(b) = &bias {
            if b.len() != out_channels {
                return Err(contract(format!(
                    "bias length {} does not match out_channels {}",
                    b.len(),
                    out_channels
                )));
            }
            if !b.iter().all(|v| v.is_finite()) {
                return Err(contract("conv bias must be finite"));
            }
        }
        Ok(Self {
            weights,
            bias,
            stride,
            pad_h: padding.0,
            pad_w: padding.1,
            groups,
        })
    }

    /// Stride-1 convolution with "same" zero padding (pad = k/2, odd kernels).
    pub fn same_padding(weights: Tensor4, bias: Option<Vec<f64>>, groups: usize) -> Result<Self> {
        if weights.height() % 2 == 0 || weights.width() % 2 == 0 {
            return Err(contract("same padding requires odd kernel dimensions"));
        }
        let pad = (weights.height() / 2, weights.width() / 2);
        Self::new(weights, bias, 1, pad, groups)
    }

    /// 1×1 convolution whose weight matrix is the identity: output equals input.
    pub fn identity_1x1(channels: usize) -> Result<Self> {
        let weights = Tensor4::from_fn(channels, channels, 1, 1, |o, i, _, _| {
            if o == i {
                1.0
            } else {
                0.0
            }
        })?;
        Self::new(weights, None, 1, (0, 0), 1)
    }

    /// Depthwise convolution (groups = channels) from per-channel kernels of
    /// shape (channels, 1, k_h, k_w), stride 1, same padding.
    pub fn depthwise_same(weights: Tensor4, bias: Option<Vec<f64>>) -> Result<Self> {
        if weights.channels() != 1 {
            return Err(contract("depthwise kernels must have one channel per group"));
        }
        let groups = weights.batch();
        Self::same_padding(weights, bias, groups)
    }

    pub fn weights(&self) -> &Tensor4 {
        &self.weights
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> (usize, usize) {
        (self.pad_h, self.pad_w)
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn out_channels(&self) -> usize {
        self.weights.batch()
    }

    pub fn in_channels(&self) -> usize {
        self.weights.channels() * self.groups
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weights.height(), self.weights.width())
    }

    /// Output spatial dims for an input of (h, w), or an error when the
    /// padded input is smaller than the kernel.
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel();
        let ph = h + 2 * self.pad_h;
        let pw = w + 2 * self.pad_w;
        if ph < kh || pw < kw {
            return Err(contract(format!(
                "padded input {}x{} smaller than kernel {}x{}",
                ph, pw, kh, kw
            )));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }
}

/// Dense 2-D cross-correlation with zero padding.
///
/// Output shape is (batch, out_channels, (H+2p_h−k_h)/s+1, (W+2p_w−k_w)/s+1).
/// Accumulation per output element runs in a fixed order (channel-major, then
/// kernel rows, then columns), so results do not depend on any parallelism.
pub fn conv2d(x: &Tensor4, p: &Conv2dParams) -> Result<Tensor4> {
    if x.channels() != p.in_channels() {
        return Err(contract(format!(
            "conv expects {} input channels, got {}",
            p.in_channels(),
            x.channels()
        )));
    }
    let (out_h, out_w) = p.output_dims(x.height(), x.width())?;
    let (kh, kw) = p.kernel();
    let out_c = p.out_channels();
    let in_per_group = p.weights.channels();
    let oc_per_group = out_c / p.groups();
    let (h, w) = (x.height(), x.width());
    let (pad_h, pad_w, stride) = (p.pad_h as isize, p.pad_w as isize, p.stride);

    let mut out = vec![0.0f64; x.batch() * out_c * out_h * out_w];
    let mut o = 0;
    for b in 0..x.batch() {
        for oc in 0..out_c {
            let g = oc / oc_per_group;
            let ic_base = g * in_per_group;
            let bias = p.bias.as_ref().map_or(0.0, |v| v[oc]);
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let mut acc = bias;
                    for ic in 0..in_per_group {
                        for ki in 0..kh {
                            let ih = (oh * stride) as isize + ki as isize - pad_h;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for kj in 0..kw {
                                let iw = (ow * stride) as isize + kj as isize - pad_w;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                acc += p.weights.get(oc, ic, ki, kj)
                                    * x.get(b, ic_base + ic, ih as usize, iw as usize);
                            }
                        }
                    }
                    out[o] = acc;
                    o += 1;
                }
            }
        }
    }
    Tensor4::new(x.batch(), out_c, out_h, out_w, out)
}

/// Per-channel batch normalization parameters (inference form).
#[derive(Debug, Clone)]
pub struct BatchNormParams {
    gamma: Vec<f64>,
    beta: Vec<f64>,
    mu: Vec<f64>,
    sigma2: Vec<f64>,
    epsilon: f64,
}

impl BatchNormParams {
    pub fn new(
        gamma: Vec<f64>,
        beta: Vec<f64>,
        mu: Vec<f64>,
        sigma2: Vec<f64>,
        epsilon: f64,
    ) -> Result<Self> {
        let c = gamma.len();
        if beta.len() != c || mu.len() != c || sigma2.len() != c {
            return Err(contract("batch-norm parameter arrays must share one length"));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(contract("batch-norm epsilon must be positive"));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !(finite(&gamma) && finite(&beta) && finite(&mu) && finite(&sigma2)) {
            return Err(contract("batch-norm parameters must be finite"));
        }
        if sigma2.iter().any(|&v| v < 0.0) {
            return Err(contract("batch-norm variance must be non-negative"));
        }
        Ok(Self {
            gamma,
            beta,
            mu,
            sigma2,
            epsilon,
        })
    }

    /// Parameters that make the normalization an exact identity:
    /// gamma = 1, beta = 0, mu = 0, sigma² = 1 − ε, so √(σ² + ε) = 1.
    pub fn identity(channels: usize) -> Self {
        let eps = 1e-5;
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mu: vec![0.0; channels],
            sigma2: vec![1.0 - eps; channels],
            epsilon: eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Per-channel scale α_c = γ_c / √(σ²_c + ε).
    pub fn channel_scale(&self, c: usize) -> f64 {
        self.gamma[c] / (self.sigma2[c] + self.epsilon).sqrt()
    }
}

/// Per-channel affine normalization using running statistics; shape preserved.
pub fn batchnorm_infer(x: &Tensor4, bn: &BatchNormParams) -> Result<Tensor4> {
    if bn.channels() != x.channels() {
        return Err(contract(format!(
            "batch norm has {} channels, tensor has {}",
            bn.channels(),
            x.channels()
        )));
    }
    let plane = x.height() * x.width();
    let mut out = Vec::with_capacity(x.values().len());
    for b in 0..x.batch() {
        for c in 0..x.channels() {
            let scale = bn.channel_scale(c);
            let shift = bn.beta[c] - scale * bn.mu[c];
            let start = x.index(b, c, 0, 0);
            out.extend(x.values()[start..start + plane].iter().map(|v| v * scale + shift));
        }
    }
    Tensor4::new(x.batch(), x.channels(), x.height(), x.width(), out)
}

/// Elementwise activation; shape preserved.
pub fn activation(x: &Tensor4, kind: Activation) -> Tensor4 {
    // Activations of finite inputs are finite, so revalidation cannot fail.
    x.map(|v| kind.apply(v)).expect("activation preserves finiteness")
}

/// Global average pooling: (B, C, H, W) → (B, C, 1, 1) of spatial means.
pub fn gap(x: &Tensor4) -> Tensor4 {
    let plane = (x.height() * x.width()) as f64;
    let mut out = Vec::with_capacity(x.batch() * x.channels());
    for b in 0..x.batch() {
        for c in 0..x.channels() {
            let start = x.index(b, c, 0, 0);
            let sum: f64 = x.values()[start..start + x.height() * x.width()].iter().sum();
            out.push(sum / plane);
        }
    }
    Tensor4::new(x.batch(), x.channels(), 1, 1, out).expect("pooled shape is valid")
}

/// Concatenate tensors along the channel axis. Batch and spatial dims must match.
pub fn concat_channels(parts: &[Tensor4]) -> Result<Tensor4> {
    let first = parts
        .first()
        .ok_or_else(|| contract("concat requires at least one part"))?;
    let (b, _, h, w) = first.shape();
    let mut channels = 0;
    for p in parts {
        if p.batch() != b || p.height() != h || p.width() != w {
            return Err(contract(format!(
                "concat parts disagree: {:?} vs {:?}",
                first.shape(),
                p.shape()
            )));
        }
        channels += p.channels();
    }
    let plane = h * w;
    let mut values = Vec::with_capacity(b * channels * plane);
    for bi in 0..b {
        for p in parts {
            let start = p.index(bi, 0, 0, 0);
            values.extend_from_slice(&p.values()[start..start + p.channels() * plane]);
        }
    }
    Tensor4::new(b, channels, h, w, values)
}

/// Split a tensor along the channel axis into parts of the given sizes.
/// Exact left inverse of [`concat_channels`].
pub fn split_channels(x: &Tensor4, sizes: &[usize]) -> Result<Vec<Tensor4>> {
    if sizes.iter().sum::<usize>() != x.channels() {
        return Err(contract(format!(
            "split sizes sum to {}, tensor has {} channels",
            sizes.iter().sum::<usize>(),
            x.channels()
        )));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(contract("split sizes must be >= 1"));
    }
    let plane = x.height() * x.width();
    let mut parts = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for &size in sizes {
        let mut values = Vec::with_capacity(x.batch() * size * plane);
        for b in 0..x.batch() {
            let start = x.index(b, offset, 0, 0);
            values.extend_from_slice(&x.values()[start..start + size * plane]);
        }
        parts.push(Tensor4::new(x.batch(), size, x.height(), x.width(), values)?);
        offset += size;
    }
    Ok(parts)
}
