//! Dual-domain multi-scale attention with a cross-stage partial wrapper.
//!
//! The inner block projects its input with a 1×1 convolution, runs four
//! depthwise branches over the projection — k×k, 1×k, k×1 (k = 31 by
//! default) and 1×1 — alongside a frequency–spatial–channel attention (FSCA)
//! branch, sums everything onto the untouched input residual, and projects
//! the aggregate with a second 1×1 convolution.
//!
//! FSCA reweights per-channel in the Fourier domain: channel weights from
//! global average pooling and a 1×1 conv scale the spectrum, the inverse
//! transform reconstructs the spatial map, and a second pooled weight set
//! rescales the result. Real per-channel scaling preserves Hermitian
//! symmetry, so the inverse transform of a real input stays real up to
//! rounding; the imaginary residue is asserted, not silently dropped.
//!
//! The cross-stage wrapper splits the channels, runs the inner block on one
//! half, carries the other half untouched, and merges with a 1×1 convolution.

use rand::Rng;

use crate::error::{contract, Error, Result};
use crate::tensor::{
    activation, concat_channels, conv2d, dft2, gap, idft2, split_channels, Activation,
    Conv2dParams, Tensor4,
};

/// How the two FSCA attention maps are produced.
///
/// `Learned` is the real path (pool → 1×1 conv → sigmoid). `Pinned` bypasses
/// it and fixes both maps to constants — the hook used by identity and
/// scalar-commutation checks, and by blocks that want the branch disabled
/// (`a_sc = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttentionMode {
    Learned,
    Pinned { a_c: f64, a_sc: f64 },
}

/// Parameters of the frequency–spatial–channel attention branch.
#[derive(Debug, Clone)]
pub struct FscaParams {
    chan_attn_conv: Conv2dParams,
    sc_attn_conv: Conv2dParams,
    mode: AttentionMode,
}

impl FscaParams {
    pub fn new(chan_attn_conv: Conv2dParams, sc_attn_conv: Conv2dParams) -> Result<Self> {
        for (name, conv) in [("channel", &chan_attn_conv), ("spatial-channel", &sc_attn_conv)] {
            if conv.kernel() != (1, 1) {
                return Err(contract(format!("{name} attention conv must be 1x1")));
            }
            if conv.in_channels() != conv.out_channels() {
                return Err(contract(format!("{name} attention conv must map C to C")));
            }
        }
        if chan_attn_conv.in_channels() != sc_attn_conv.in_channels() {
            return Err(contract("attention convs must agree on channel count"));
        }
        Ok(Self {
            chan_attn_conv,
            sc_attn_conv,
            mode: AttentionMode::Learned,
        })
    }

    /// Pin both attention maps to constants, bypassing pooling and sigmoid.
    pub fn pinned(channels: usize, a_c: f64, a_sc: f64) -> Result<Self> {
        let mut p = Self::new(
            Conv2dParams::identity_1x1(channels)?,
            Conv2dParams::identity_1x1(channels)?,
        )?;
        p.mode = AttentionMode::Pinned { a_c, a_sc };
        Ok(p)
    }

    /// Random learned attention for demos.
    pub fn random(channels: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = (6.0 / channels as f64).sqrt();
        let w1 = Tensor4::random(channels, channels, 1, 1, -bound, bound, rng)?;
        let w2 = Tensor4::random(channels, channels, 1, 1, -bound, bound, rng)?;
        Self::new(
            Conv2dParams::new(w1, None, 1, (0, 0), 1)?,
            Conv2dParams::new(w2, None, 1, (0, 0), 1)?,
        )
    }

    pub fn channels(&self) -> usize {
        self.chan_attn_conv.in_channels()
    }

    pub fn mode(&self) -> AttentionMode {
        self.mode
    }

    /// The two per-(batch, channel) attention maps as (B, C, 1, 1) tensors.
    fn attention_maps(&self, x: &Tensor4) -> Result<(Tensor4, Tensor4)> {
        match self.mode {
            AttentionMode::Pinned { a_c, a_sc } => Ok((
                Tensor4::filled(x.batch(), x.channels(), 1, 1, a_c)?,
                Tensor4::filled(x.batch(), x.channels(), 1, 1, a_sc)?,
            )),
            AttentionMode::Learned => {
                let pooled = gap(x);
                let a_c = activation(&conv2d(&pooled, &self.chan_attn_conv)?, Activation::Sigmoid);
                let a_sc = activation(&conv2d(&pooled, &self.sc_attn_conv)?, Activation::Sigmoid);
                Ok((a_c, a_sc))
            }
        }
    }
}

/// Multiply every spatial plane of `x` by its (b, c) entry of `map`.
fn scale_by_channel_map(x: &Tensor4, map: &Tensor4) -> Result<Tensor4> {
    if map.shape() != (x.batch(), x.channels(), 1, 1) {
        return Err(contract("channel map must have shape (B, C, 1, 1)"));
    }
    Tensor4::from_fn(x.batch(), x.channels(), x.height(), x.width(), |b, c, h, w| {
        x.get(b, c, h, w) * map.get(b, c, 0, 0)
    })
}

/// Frequency–spatial–channel attention forward.
///
/// A_c scales the spectrum of each channel, the inverse transform returns to
/// the spatial domain, and A_sc rescales the reconstruction. Errors with
/// [`Error::Internal`] if the inverse transform's imaginary residue exceeds
/// 1e-8·max|x|, which would mean the transform pair (not the input) is broken.
pub fn fsca_forward(x: &Tensor4, p: &FscaParams) -> Result<Tensor4> {
    if p.channels() != x.channels() {
        return Err(contract(format!(
            "fsca expects {} channels, got {}",
            p.channels(),
            x.channels()
        )));
    }
    let (a_c, a_sc) = p.attention_maps(x)?;

    let mut spectrum = dft2(x);
    for b in 0..x.batch() {
        for c in 0..x.channels() {
            spectrum.scale_channel(b, c, a_c.get(b, c, 0, 0));
        }
    }
    let reconstructed = idft2(&spectrum);
    let residue = reconstructed.max_abs_imag();
    let budget = 1e-8 * x.max_abs();
    if residue > budget {
        return Err(Error::Internal(format!(
            "imaginary residue {residue:.3e} exceeds {budget:.3e} after inverse DFT"
        )));
    }
    scale_by_channel_map(&reconstructed.real()?, &a_sc)
}

/// Parameters of the inner multi-scale attention block.
#[derive(Debug, Clone)]
pub struct DmamParams {
    proj_in: Conv2dParams,
    dw_kk: Conv2dParams,
    dw_1k: Conv2dParams,
    dw_k1: Conv2dParams,
    dw_11: Conv2dParams,
    fsca: FscaParams,
    proj_out: Conv2dParams,
    k: usize,
}

impl DmamParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        proj_in: Conv2dParams,
        k: usize,
        dw_kk: Conv2dParams,
        dw_1k: Conv2dParams,
        dw_k1: Conv2dParams,
        dw_11: Conv2dParams,
        fsca: FscaParams,
        proj_out: Conv2dParams,
    ) -> Result<Self> {
        if k % 2 == 0 {
            return Err(contract("strip kernel size k must be odd"));
        }
        // The residual adds the unprojected input to branch outputs, which
        // forces the input projection to preserve the channel count.
        if proj_in.kernel() != (1, 1) || proj_in.in_channels() != proj_in.out_channels() {
            return Err(contract("input projection must be a C-to-C 1x1 conv"));
        }
        let c = proj_in.in_channels();
        let checks = [
            ("k x k", &dw_kk, (k, k)),
            ("1 x k", &dw_1k, (1, k)),
            ("k x 1", &dw_k1, (k, 1)),
            ("1 x 1", &dw_11, (1, 1)),
        ];
        for (name, conv, kernel) in checks {
            if conv.kernel() != kernel {
                return Err(contract(format!("depthwise {name} branch has wrong kernel")));
            }
            if conv.groups() != c || conv.in_channels() != c || conv.out_channels() != c {
                return Err(contract(format!("depthwise {name} branch must have groups = C")));
            }
            if conv.stride() != 1 {
                return Err(contract(format!("depthwise {name} branch must be stride 1")));
            }
            if conv.padding() != (kernel.0 / 2, kernel.1 / 2) {
                return Err(contract(format!("depthwise {name} branch must use same padding")));
            }
        }
        if fsca.channels() != c {
            return Err(contract("fsca channel count must match the projection"));
        }
        if proj_out.kernel() != (1, 1) || proj_out.in_channels() != c {
            return Err(contract("output projection must be a 1x1 conv over C channels"));
        }
        Ok(Self {
            proj_in,
            dw_kk,
            dw_1k,
            dw_k1,
            dw_11,
            fsca,
            proj_out,
            k,
        })
    }

    /// Randomly initialized block for demos: He-scaled projections and
    /// depthwise kernels, learned attention.
    pub fn random(channels: usize, k: usize, rng: &mut impl Rng) -> Result<Self> {
        let proj = |rng: &mut _| -> Result<Conv2dParams> {
            let bound = (6.0 / channels as f64).sqrt();
            Conv2dParams::new(
                Tensor4::random(channels, channels, 1, 1, -bound, bound, rng)?,
                None,
                1,
                (0, 0),
                1,
            )
        };
        let dw = |rng: &mut _, kh: usize, kw: usize| -> Result<Conv2dParams> {
            let bound = (6.0 / (kh * kw) as f64).sqrt();
            Conv2dParams::depthwise_same(
                Tensor4::random(channels, 1, kh, kw, -bound, bound, rng)?,
                None,
            )
        };
        Self::new(
            proj(rng)?,
            k,
            dw(rng, k, k)?,
            dw(rng, 1, k)?,
            dw(rng, k, 1)?,
            dw(rng, 1, 1)?,
            FscaParams::random(channels, rng)?,
            proj(rng)?,
        )
    }

    pub fn channels(&self) -> usize {
        self.proj_in.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.proj_out.out_channels()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fsca(&self) -> &FscaParams {
        &self.fsca
    }

    /// Replace the FSCA attention mode (used to pin or disable the branch).
    pub fn with_fsca_mode(mut self, mode: AttentionMode) -> Self {
        self.fsca.mode = mode;
        self
    }
}

/// Inner block forward: project, run the four depthwise branches and FSCA on
/// the projection, sum onto the raw-input residual in a fixed order, project.
pub fn dmam_forward(x: &Tensor4, p: &DmamParams) -> Result<Tensor4> {
    if x.channels() != p.channels() {
        return Err(contract(format!(
            "block expects {} channels, got {}",
            p.channels(),
            x.channels()
        )));
    }
    let projected = conv2d(x, &p.proj_in)?;
    let sum = x
        .add(&conv2d(&projected, &p.dw_1k)?)?
        .add(&conv2d(&projected, &p.dw_k1)?)?
        .add(&conv2d(&projected, &p.dw_kk)?)?
        .add(&conv2d(&projected, &p.dw_11)?)?
        .add(&fsca_forward(&projected, &p.fsca)?)?;
    conv2d(&sum, &p.proj_out)
}

/// Cross-stage wrapper parameters: the inner block applied to one channel
/// split, the other split carried as identity, and the 1×1 merge convolution.
#[derive(Debug, Clone)]
pub struct CsdmamParams {
    inner: DmamParams,
    merge_conv: Conv2dParams,
    branch_channels: usize,
    identity_channels: usize,
}

impl CsdmamParams {
    /// `split_ratio` is the fraction of channels routed through the inner
    /// block (½ by default); both splits must end up non-empty.
    pub fn new(
        channels: usize,
        split_ratio: f64,
        inner: DmamParams,
        merge_conv: Conv2dParams,
    ) -> Result<Self> {
        if channels < 2 {
            return Err(contract("cross-stage split needs at least 2 channels"));
        }
        if !(0.0..=1.0).contains(&split_ratio) {
            return Err(contract("split ratio must lie in [0, 1]"));
        }
        let branch_channels =
            ((channels as f64 * split_ratio).round() as usize).clamp(1, channels - 1);
        let identity_channels = channels - branch_channels;
        if inner.channels() != branch_channels {
            return Err(contract(format!(
                "inner block expects {} channels, split provides {}",
                inner.channels(),
                branch_channels
            )));
        }
        if merge_conv.kernel() != (1, 1) {
            return Err(contract("merge conv must be 1x1"));
        }
        if merge_conv.in_channels() != inner.out_channels() + identity_channels {
            return Err(contract(format!(
                "merge conv expects {} input channels, concatenation provides {}",
                merge_conv.in_channels(),
                inner.out_channels() + identity_channels
            )));
        }
        Ok(Self {
            inner,
            merge_conv,
            branch_channels,
            identity_channels,
        })
    }

    /// Even split with a randomly initialized inner block and merge.
    pub fn random(channels: usize, k: usize, rng: &mut impl Rng) -> Result<Self> {
        if channels < 2 {
            return Err(contract("cross-stage split needs at least 2 channels"));
        }
        let branch = channels / 2;
        let inner = DmamParams::random(branch, k, rng)?;
        let merged_in = branch + (channels - branch);
        let bound = (6.0 / merged_in as f64).sqrt();
        let merge_conv = Conv2dParams::new(
            Tensor4::random(channels, merged_in, 1, 1, -bound, bound, rng)?,
            None,
            1,
            (0, 0),
            1,
        )?;
        Self::new(channels, 0.5, inner, merge_conv)
    }

    pub fn channels(&self) -> usize {
        self.branch_channels + self.identity_channels
    }

    pub fn inner(&self) -> &DmamParams {
        &self.inner
    }

    pub fn splits(&self) -> (usize, usize) {
        (self.branch_channels, self.identity_channels)
    }
}

/// Intermediate maps exposed for inspection (feature-map dumps, the
/// identity-half bit-exactness check).
#[derive(Debug, Clone)]
pub struct CsdmamTrace {
    /// Inner-block output on the branch half.
    pub branch_out: Tensor4,
    /// Untouched identity half.
    pub identity: Tensor4,
    /// Concatenation of the two, immediately before the merge convolution.
    pub pre_merge: Tensor4,
    /// Final merged output.
    pub output: Tensor4,
}

/// Cross-stage forward with tap points.
pub fn csdmam_forward_traced(x: &Tensor4, p: &CsdmamParams) -> Result<CsdmamTrace> {
    if x.channels() != p.channels() {
        return Err(contract(format!(
            "cross-stage block expects {} channels, got {}",
            p.channels(),
            x.channels()
        )));
    }
    let parts = split_channels(x, &[p.branch_channels, p.identity_channels])?;
    let branch_out = dmam_forward(&parts[0], &p.inner)?;
    let identity = parts[1].clone();
    let pre_merge = concat_channels(&[branch_out.clone(), identity.clone()])?;
    let output = conv2d(&pre_merge, &p.merge_conv)?;
    Ok(CsdmamTrace {
        branch_out,
        identity,
        pre_merge,
        output,
    })
}

/// Cross-stage forward: split, process one half, concatenate, merge.
pub fn csdmam_forward(x: &Tensor4, p: &CsdmamParams) -> Result<Tensor4> {
    Ok(csdmam_forward_traced(x, p)?.output)
}
