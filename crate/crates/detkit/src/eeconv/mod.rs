//! Edge-enhanced convolution: a four-branch re-parameterizable 3×3 block.
//!
//! During training the block evaluates four parallel 3×3 branches — central
//! difference (CDC), horizontal difference (HDC), vertical difference (VDC)
//! and a vanilla convolution — followed by batch norm and an activation.
//! Because each difference operator admits an exact 3×3 equivalent kernel,
//! the whole block collapses algebraically into one fused convolution for
//! inference: the branch kernels are summed and the batch-norm scale/shift is
//! absorbed into the weights and bias. The fused path is bit-for-bit cheap
//! (a single vanilla 3×3 conv) and numerically equivalent to the training
//! path to ~1e-12 in double precision.
//!
//! The difference operators all annihilate spatially constant input (zero DC
//! response before bias), which is what makes them edge detectors:
//! - CDC debits the center tap by the kernel sum, so the effective kernel
//!   sums to zero;
//! - HDC is the column-antisymmetric projection (middle column zero);
//! - VDC is the row-antisymmetric projection (middle row zero).

mod block;
mod flops;
mod persist;

pub use block::{
    build_resnet18_stages, ee_resnet_stage, eeblock_forward, random_eeblock, EeBlockParams,
    EeconvKernel, Shortcut,
};
pub use flops::{conv_macs, eeconv_macs, ConvShape, EeconvMacs};
pub use persist::{export_fused, import_fused, parse_sidecar_bytes, FusedSidecar};

use rand::Rng;

use crate::error::{contract, Result};
use crate::tensor::{
    activation, batchnorm_infer, conv2d, Activation, BatchNormParams, Conv2dParams, Tensor4,
};

/// Which branches contribute to the summed kernel.
///
/// The default sums all four; `DifferenceOnly` drops the vanilla branch and
/// sums just the three difference operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BranchMode {
    #[default]
    FourBranch,
    DifferenceOnly,
}

/// Central difference: every tap unchanged except the center, which becomes
/// W(1,1) − ΣW. The resulting kernel sums to zero.
pub fn cdc_effective_kernel(w: &Tensor4) -> Result<Tensor4> {
    require_3x3(w)?;
    let mut out = w.values().to_vec();
    for slice in 0..w.batch() * w.channels() {
        let base = slice * 9;
        let sum: f64 = out[base..base + 9].iter().sum();
        out[base + 4] -= sum;
    }
    Tensor4::new(w.batch(), w.channels(), 3, 3, out)
}

/// Horizontal difference: Ŵ(i,j) = W(i,j) − W(i, 2−j). Antisymmetric about
/// the center column; middle column zero.
pub fn hdc_effective_kernel(w: &Tensor4) -> Result<Tensor4> {
    require_3x3(w)?;
    Tensor4::from_fn(w.batch(), w.channels(), 3, 3, |o, i, r, c| {
        w.get(o, i, r, c) - w.get(o, i, r, 2 - c)
    })
}

/// Vertical difference: Ŵ(i,j) = W(i,j) − W(2−i, j). Antisymmetric about the
/// center row; middle row zero.
pub fn vdc_effective_kernel(w: &Tensor4) -> Result<Tensor4> {
    require_3x3(w)?;
    Tensor4::from_fn(w.batch(), w.channels(), 3, 3, |o, i, r, c| {
        w.get(o, i, r, c) - w.get(o, i, 2 - r, c)
    })
}

fn require_3x3(w: &Tensor4) -> Result<()> {
    if w.height() != 3 || w.width() != 3 {
        return Err(contract(format!(
            "difference kernels must be 3x3, got {}x{}",
            w.height(),
            w.width()
        )));
    }
    Ok(())
}

/// The four trainable branches of an edge-enhanced convolution plus its batch
/// norm and activation. Immutable after construction.
#[derive(Debug, Clone)]
pub struct ConvBranchSet {
    w_cdc: Tensor4,
    w_hdc: Tensor4,
    w_vdc: Tensor4,
    w_van: Tensor4,
    b_cdc: Vec<f64>,
    b_hdc: Vec<f64>,
    b_vdc: Vec<f64>,
    b_van: Vec<f64>,
    bn: BatchNormParams,
    activation: Activation,
    mode: BranchMode,
}

impl ConvBranchSet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        w_cdc: Tensor4,
        w_hdc: Tensor4,
        w_vdc: Tensor4,
        w_van: Tensor4,
        b_cdc: Vec<f64>,
        b_hdc: Vec<f64>,
        b_vdc: Vec<f64>,
        b_van: Vec<f64>,
        bn: BatchNormParams,
        activation: Activation,
        mode: BranchMode,
    ) -> Result<Self> {
        require_3x3(&w_cdc)?;
        let shape = w_cdc.shape();
        for w in [&w_hdc, &w_vdc, &w_van] {
            if w.shape() != shape {
                return Err(contract("all branch kernels must share one shape"));
            }
        }
        let out_c = shape.0;
        for b in [&b_cdc, &b_hdc, &b_vdc, &b_van] {
            if b.len() != out_c {
                return Err(contract("branch bias length must equal out_channels"));
            }
            if !b.iter().all(|v| v.is_finite()) {
                return Err(contract("branch biases must be finite"));
            }
        }
        if bn.channels() != out_c {
            return Err(contract("batch-norm channels must equal out_channels"));
        }
        Ok(Self {
            w_cdc,
            w_hdc,
            w_vdc,
            w_van,
            b_cdc,
            b_hdc,
            b_vdc,
            b_van,
            bn,
            activation,
            mode,
        })
    }

    /// Random branch set for equivalence trials: kernels and biases uniform in
    /// [−0.5, 0.5], batch-norm statistics with variance in [0.5, 2.0] so the
    /// absorbed scale α_c genuinely differs from 1.
    pub fn random_trial(
        out_channels: usize,
        in_channels: usize,
        act: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w_cdc = Tensor4::random(out_channels, in_channels, 3, 3, -0.5, 0.5, rng)?;
        let w_hdc = Tensor4::random(out_channels, in_channels, 3, 3, -0.5, 0.5, rng)?;
        let w_vdc = Tensor4::random(out_channels, in_channels, 3, 3, -0.5, 0.5, rng)?;
        let w_van = Tensor4::random(out_channels, in_channels, 3, 3, -0.5, 0.5, rng)?;
        let uniform = |rng: &mut dyn rand::RngCore, lo: f64, hi: f64| -> Vec<f64> {
            (0..out_channels).map(|_| rng.gen_range(lo..hi)).collect()
        };
        let b_cdc = uniform(rng, -0.5, 0.5);
        let b_hdc = uniform(rng, -0.5, 0.5);
        let b_vdc = uniform(rng, -0.5, 0.5);
        let b_van = uniform(rng, -0.5, 0.5);
        let gamma = uniform(rng, -0.5, 0.5);
        let beta = uniform(rng, -0.5, 0.5);
        let mu = uniform(rng, -0.5, 0.5);
        let sigma2 = uniform(rng, 0.5, 2.0);
        let bn = BatchNormParams::new(gamma, beta, mu, sigma2, 1e-5)?;
        Self::new(
            w_cdc,
            w_hdc,
            w_vdc,
            w_van,
            b_cdc,
            b_hdc,
            b_vdc,
            b_van,
            bn,
            act,
            BranchMode::FourBranch,
        )
    }

    pub fn out_channels(&self) -> usize {
        self.w_cdc.batch()
    }

    pub fn in_channels(&self) -> usize {
        self.w_cdc.channels()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn bn(&self) -> &BatchNormParams {
        &self.bn
    }

    pub fn mode(&self) -> BranchMode {
        self.mode
    }

    /// The linearly combined kernel and bias, W_Σ and b_Σ: the sum of the
    /// effective difference kernels (plus the vanilla branch in
    /// [`BranchMode::FourBranch`]) and the matching bias sum.
    pub fn summed(&self) -> Result<(Tensor4, Vec<f64>)> {
        let mut w = cdc_effective_kernel(&self.w_cdc)?
            .add(&hdc_effective_kernel(&self.w_hdc)?)?
            .add(&vdc_effective_kernel(&self.w_vdc)?)?;
        let mut b: Vec<f64> = self
            .b_cdc
            .iter()
            .zip(&self.b_hdc)
            .zip(&self.b_vdc)
            .map(|((a, b), c)| a + b + c)
            .collect();
        if self.mode == BranchMode::FourBranch {
            w = w.add(&self.w_van)?;
            for (acc, v) in b.iter_mut().zip(&self.b_van) {
                *acc += v;
            }
        }
        Ok((w, b))
    }

    /// Per-branch effective convolutions as standalone parameter sets, used by
    /// the four-pass oracle and the training-cost benchmark.
    pub fn branch_convs(&self) -> Result<Vec<Conv2dParams>> {
        let mut convs = vec![
            Conv2dParams::same_padding(cdc_effective_kernel(&self.w_cdc)?, Some(self.b_cdc.clone()), 1)?,
            Conv2dParams::same_padding(hdc_effective_kernel(&self.w_hdc)?, Some(self.b_hdc.clone()), 1)?,
            Conv2dParams::same_padding(vdc_effective_kernel(&self.w_vdc)?, Some(self.b_vdc.clone()), 1)?,
        ];
        if self.mode == BranchMode::FourBranch {
            convs.push(Conv2dParams::same_padding(
                self.w_van.clone(),
                Some(self.b_van.clone()),
                1,
            )?);
        }
        Ok(convs)
    }
}

/// Training-path forward: activation(batchnorm(conv(x; W_Σ, b_Σ))), with
/// stride 1 and same padding.
pub fn eeconv_forward_train(x: &Tensor4, branches: &ConvBranchSet) -> Result<Tensor4> {
    let (w, b) = branches.summed()?;
    let conv = Conv2dParams::same_padding(w, Some(b), 1)?;
    let z = conv2d(x, &conv)?;
    let y = batchnorm_infer(&z, &branches.bn)?;
    Ok(activation(&y, branches.activation))
}

/// A fused edge-enhanced convolution: one 3×3 kernel and bias with the batch
/// norm absorbed, plus the carried-through activation.
#[derive(Debug, Clone)]
pub struct FusedConv {
    weights: Tensor4,
    bias: Vec<f64>,
    activation: Activation,
}

impl FusedConv {
    pub fn new(weights: Tensor4, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        require_3x3(&weights)?;
        if bias.len() != weights.batch() {
            return Err(contract("fused bias length must equal out_channels"));
        }
        if !bias.iter().all(|v| v.is_finite()) {
            return Err(contract("fused bias must be finite"));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn weights(&self) -> &Tensor4 {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn out_channels(&self) -> usize {
        self.weights.batch()
    }

    pub fn in_channels(&self) -> usize {
        self.weights.channels()
    }
}

/// Collapse a branch set into a single convolution by absorbing the batch
/// norm: w_final[c] = α_c · W_Σ[c] and b_final[c] = α_c·(b_Σ[c] − μ_c) + β_c
/// with α_c = γ_c / √(σ²_c + ε).
pub fn fuse(branches: &ConvBranchSet) -> Result<FusedConv> {
    let (w_sum, b_sum) = branches.summed()?;
    let out_c = branches.out_channels();
    let per_out = w_sum.channels() * 9;
    let mut w_final = Vec::with_capacity(w_sum.values().len());
    let mut b_final = Vec::with_capacity(out_c);
    for c in 0..out_c {
        let alpha = branches.bn.channel_scale(c);
        let start = c * per_out;
        w_final.extend(w_sum.values()[start..start + per_out].iter().map(|v| alpha * v));
        b_final.push(alpha * (b_sum[c] - branches.bn.mu()[c]) + branches.bn.beta()[c]);
    }
    let weights = Tensor4::new(out_c, w_sum.channels(), 3, 3, w_final)?;
    FusedConv::new(weights, b_final, branches.activation)
}

/// Inference-path forward: activation(conv(x; w_final, b_final)), stride 1,
/// same padding.
pub fn eeconv_forward_fused(x: &Tensor4, fused: &FusedConv) -> Result<Tensor4> {
    let conv = Conv2dParams::same_padding(fused.weights.clone(), Some(fused.bias.clone()), 1)?;
    Ok(activation(&conv2d(x, &conv)?, fused.activation))
}

/// Outcome of a batch of randomized train-vs-fused equivalence trials.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FusionTrialReport {
    pub trials: usize,
    pub max_deviation: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Run randomized fusion-equivalence trials: per trial, a fresh random branch
/// set (channels ≤ `max_width`, spatial ≤ `max_spatial`) is evaluated through
/// the training path and through its fused form on the same random input, and
/// the worst elementwise deviation is tracked against `threshold`.
///
/// `corrupt` perturbs each fused bias by 1e-6 — a negative control that must
/// make the check fail.
pub fn run_fusion_trials(
    trials: usize,
    max_width: usize,
    max_spatial: usize,
    threshold: f64,
    seed: u64,
    corrupt: bool,
) -> Result<FusionTrialReport> {
    use rand::SeedableRng;
    if trials < 1 || max_width < 1 || max_spatial < 2 {
        return Err(contract("fusion trials need trials >= 1, width >= 1, spatial >= 2"));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut max_deviation = 0.0f64;
    for _ in 0..trials {
        let out_c = rng.gen_range(1..=max_width);
        let in_c = rng.gen_range(1..=max_width);
        let h = rng.gen_range(2..=max_spatial);
        let w = rng.gen_range(2..=max_spatial);
        let batch = rng.gen_range(1..=2);
        let act = match rng.gen_range(0..3) {
            0 => Activation::Relu,
            1 => Activation::Sigmoid,
            _ => Activation::Identity,
        };
        let branches = ConvBranchSet::random_trial(out_c, in_c, act, &mut rng)?;
        let x = Tensor4::random(batch, in_c, h, w, -1.0, 1.0, &mut rng)?;
        let mut fused = fuse(&branches)?;
        if corrupt {
            let bias: Vec<f64> = fused.bias.iter().map(|b| b + 1e-6).collect();
            fused = FusedConv::new(fused.weights.clone(), bias, fused.activation)?;
        }
        let train = eeconv_forward_train(&x, &branches)?;
        let infer = eeconv_forward_fused(&x, &fused)?;
        let dev = train
            .values()
            .iter()
            .zip(infer.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        max_deviation = max_deviation.max(dev);
    }
    Ok(FusionTrialReport {
        trials,
        max_deviation,
        threshold,
        passed: max_deviation <= threshold,
    })
}
