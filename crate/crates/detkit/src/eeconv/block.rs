//! Residual blocks carrying an edge-enhanced convolution in the second-conv
//! slot, and a stage composer for ResNet-18-shaped stacks.

use rand::Rng;

use crate::error::{contract, Result};
use crate::tensor::{
    activation, batchnorm_infer, conv2d, Activation, BatchNormParams, Conv2dParams, Tensor4,
};

use super::{eeconv_forward_fused, eeconv_forward_train, fuse, ConvBranchSet, FusedConv};

/// The edge-enhanced convolution inside a block, in either of its two forms.
#[derive(Debug, Clone)]
pub enum EeconvKernel {
    Branches(ConvBranchSet),
    Fused(FusedConv),
}

impl EeconvKernel {
    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        match self {
            EeconvKernel::Branches(b) => eeconv_forward_train(x, b),
            EeconvKernel::Fused(f) => eeconv_forward_fused(x, f),
        }
    }

    /// Collapse the branch form into the fused form (no-op when already fused).
    pub fn fused(&self) -> Result<Self> {
        match self {
            EeconvKernel::Branches(b) => Ok(EeconvKernel::Fused(fuse(b)?)),
            EeconvKernel::Fused(f) => Ok(EeconvKernel::Fused(f.clone())),
        }
    }
}

/// Shortcut path of a residual block: the identity, or a 1×1 projection with
/// batch norm when the channel count or stride changes.
#[derive(Debug, Clone)]
pub enum Shortcut {
    Identity,
    Projection {
        conv: Conv2dParams,
        bn: BatchNormParams,
    },
}

impl Shortcut {
    fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        match self {
            Shortcut::Identity => Ok(x.clone()),
            Shortcut::Projection { conv, bn } => batchnorm_infer(&conv2d(x, conv)?, bn),
        }
    }
}

/// Parameters of one residual block: a plain 3×3 conv + batch norm, the
/// edge-enhanced convolution in the refining slot, and the shortcut.
#[derive(Debug, Clone)]
pub struct EeBlockParams {
    pub conv1: Conv2dParams,
    pub bn1: BatchNormParams,
    pub eeconv: EeconvKernel,
    pub shortcut: Shortcut,
    pub activation: Activation,
}

/// Residual forward: activation( eeconv(act(bn(conv1(x)))) + shortcut(x) ).
///
/// The shortcut output shape must match the main branch; mismatches surface
/// as contract errors from the final addition.
pub fn eeblock_forward(x: &Tensor4, p: &EeBlockParams) -> Result<Tensor4> {
    let t = activation(&batchnorm_infer(&conv2d(x, &p.conv1)?, &p.bn1)?, p.activation);
    let main = p.eeconv.forward(&t)?;
    let skip = p.shortcut.forward(x)?;
    if main.shape() != skip.shape() {
        return Err(contract(format!(
            "shortcut shape {:?} does not match main branch {:?}",
            skip.shape(),
            main.shape()
        )));
    }
    Ok(activation(&main.add(&skip)?, p.activation))
}

/// Sequential application of residual blocks. An empty list is the identity.
pub fn ee_resnet_stage(x: &Tensor4, blocks: &[EeBlockParams]) -> Result<Tensor4> {
    let mut out = x.clone();
    for block in blocks {
        out = eeblock_forward(&out, block)?;
    }
    Ok(out)
}

fn he_uniform_kernel(
    out_c: usize,
    in_c: usize,
    kh: usize,
    kw: usize,
    rng: &mut impl Rng,
) -> Result<Tensor4> {
    // Fan-in scaled init keeps deep random stacks finite.
    let bound = (6.0 / (in_c * kh * kw) as f64).sqrt();
    Tensor4::random(out_c, in_c, kh, kw, -bound, bound, rng)
}

fn random_bn(channels: usize, rng: &mut impl Rng) -> Result<BatchNormParams> {
    let mut draw = |lo: f64, hi: f64| -> Vec<f64> {
        (0..channels).map(|_| rng.gen_range(lo..hi)).collect()
    };
    let gamma = draw(0.5, 1.5);
    let beta = draw(-0.1, 0.1);
    let mu = draw(-0.1, 0.1);
    let sigma2 = draw(0.5, 2.0);
    BatchNormParams::new(gamma, beta, mu, sigma2, 1e-5)
}

fn random_branches(
    out_c: usize,
    in_c: usize,
    act: Activation,
    rng: &mut impl Rng,
) -> Result<ConvBranchSet> {
    let k = |rng: &mut _| he_uniform_kernel(out_c, in_c, 3, 3, rng);
    let zeros = vec![0.0; out_c];
    ConvBranchSet::new(
        k(rng)?,
        k(rng)?,
        k(rng)?,
        k(rng)?,
        zeros.clone(),
        zeros.clone(),
        zeros.clone(),
        zeros,
        random_bn(out_c, rng)?,
        act,
        super::BranchMode::FourBranch,
    )
}

/// One randomly initialized residual block mapping `in_c` channels to `out_c`
/// at the given stride (stride > 1 or a channel change forces a projection
/// shortcut).
pub fn random_eeblock(
    in_c: usize,
    out_c: usize,
    stride: usize,
    act: Activation,
    rng: &mut impl Rng,
) -> Result<EeBlockParams> {
    let conv1 = Conv2dParams::new(
        he_uniform_kernel(out_c, in_c, 3, 3, rng)?,
        None,
        stride,
        (1, 1),
        1,
    )?;
    let bn1 = random_bn(out_c, rng)?;
    let eeconv = EeconvKernel::Branches(random_branches(out_c, out_c, act, rng)?);
    let shortcut = if stride == 1 && in_c == out_c {
        Shortcut::Identity
    } else {
        Shortcut::Projection {
            conv: Conv2dParams::new(
                he_uniform_kernel(out_c, in_c, 1, 1, rng)?,
                None,
                stride,
                (0, 0),
                1,
            )?,
            bn: random_bn(out_c, rng)?,
        }
    };
    Ok(EeBlockParams {
        conv1,
        bn1,
        eeconv,
        shortcut,
        activation: act,
    })
}

/// Build the ResNet-18 stage layout ([2, 2, 2, 2] blocks) at a configurable
/// base width with random weights: stage widths are base, 2×, 4×, 8×; every
/// stage after the first opens with a stride-2 block and projection shortcut.
pub fn build_resnet18_stages(
    in_channels: usize,
    base_width: usize,
    act: Activation,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<EeBlockParams>>> {
    if base_width < 1 || in_channels < 1 {
        return Err(contract("stage widths must be >= 1"));
    }
    let mut stages = Vec::with_capacity(4);
    let mut in_c = in_channels;
    for (stage_idx, blocks) in [2usize, 2, 2, 2].into_iter().enumerate() {
        let width = base_width << stage_idx;
        let mut stage = Vec::with_capacity(blocks);
        for b in 0..blocks {
            let stride = if stage_idx > 0 && b == 0 { 2 } else { 1 };
            stage.push(random_eeblock(in_c, width, stride, act, rng)?);
            in_c = width;
        }
        stages.push(stage);
    }
    Ok(stages)
}
