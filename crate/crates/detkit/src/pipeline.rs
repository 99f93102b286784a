//! End-to-end smoke chain: generate scenes, push each image through a fixed
//! random-weight block stack (residual edge block → space-to-depth composite
//! → cross-stage attention), dump feature maps, and evaluate an oracle
//! detector (ground truth plus controlled jitter and score noise) with the
//! metrics module.
//!
//! The oracle detector closes the loop: at zero jitter it reproduces the
//! ground truth with score 1 and must evaluate to mAP50 = 1 exactly; at large
//! jitter nothing reaches the IoU threshold and mAP50 collapses to 0.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{csdmam_forward_traced, CsdmamParams, CsdmamTrace};
use crate::eeconv::{eeblock_forward, random_eeblock};
use crate::error::{contract, Result};
use crate::loss::BoxCwh;
use crate::metrics::{evaluate, Detection, EvalConfig, EvalReport, GroundTruth};
use crate::spd::{spdconv_forward, SpdConfig};
use crate::synthgen::{
    channel_mean_pgm, generate_scene, letterbox, write_ppm, Scene, SceneSpec,
};
use crate::tensor::{Activation, Conv2dParams, Tensor4};

/// Pipeline settings.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PipelineConfig {
    pub images: usize,
    pub seed: u64,
    /// Center jitter amplitude for the oracle detector, in pixels.
    pub jitter: f64,
    /// Score noise amplitude: scores are drawn from [1 − noise, 1].
    pub score_noise: f64,
    /// Input resolution fed to the block stack after letterboxing down.
    pub stack_input: usize,
    pub scene: SceneSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            images: 2,
            seed: 0,
            jitter: 0.0,
            score_noise: 0.0,
            stack_input: 64,
            scene: SceneSpec::default(),
        }
    }
}

/// What the pipeline produced.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PipelineReport {
    pub images: usize,
    pub detections: usize,
    pub ground_truths: usize,
    pub map50: Option<f64>,
    pub map50_95: Option<f64>,
    /// Output shape of the block stack on the first image (b, c, h, w).
    pub stack_output_shape: (usize, usize, usize, usize),
    pub eval: EvalReport,
}

/// Jittered copies of the ground truths with noisy scores. Zero jitter and
/// zero noise reproduce the annotations exactly with score 1.
pub fn oracle_detections(
    gts: &[GroundTruth],
    jitter: f64,
    score_noise: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Detection>> {
    if jitter < 0.0 || score_noise < 0.0 || score_noise > 0.99 {
        return Err(contract("jitter must be >= 0 and score noise in [0, 0.99]"));
    }
    gts.iter()
        .map(|g| {
            let bbox = if jitter == 0.0 {
                g.bbox
            } else {
                BoxCwh::new(
                    g.bbox.cx() + rng.gen_range(-jitter..jitter),
                    g.bbox.cy() + rng.gen_range(-jitter..jitter),
                    g.bbox.w(),
                    g.bbox.h(),
                )?
            };
            let score = if score_noise == 0.0 {
                1.0
            } else {
                1.0 - rng.gen_range(0.0..score_noise)
            };
            Detection::new(g.image_id, g.class_id, bbox, score)
        })
        .collect()
}

/// The fixed random-weight block stack, built once per run from the seed.
pub struct BlockStack {
    eeblock: crate::eeconv::EeBlockParams,
    spd: SpdConfig,
    attention: CsdmamParams,
}

impl BlockStack {
    /// Stack layout: 3 → 8 channels at stride 2, space-to-depth halving with
    /// 32 → 16 channel fusion, then cross-stage attention at k = 31.
    pub fn random(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eeblock = random_eeblock(3, 8, 2, Activation::Relu, &mut rng)?;
        let bound = (6.0f64 / (32.0 * 9.0)).sqrt();
        let follow = Conv2dParams::same_padding(
            Tensor4::random(16, 32, 3, 3, -bound, bound, &mut rng)?,
            None,
            1,
        )?;
        let spd = SpdConfig::scale2(follow)?;
        let attention = CsdmamParams::random(16, 31, &mut rng)?;
        Ok(Self {
            eeblock,
            spd,
            attention,
        })
    }

    /// Run the chain, returning the attention trace for feature-map dumps.
    pub fn forward(&self, x: &Tensor4) -> Result<CsdmamTrace> {
        let a = eeblock_forward(x, &self.eeblock)?;
        let b = spdconv_forward(&a, &self.spd)?;
        csdmam_forward_traced(&b, &self.attention)
    }
}

/// Run the full chain. When `out_dir` is given, scenes are written as PPM,
/// annotations/predictions as JSON-lines, feature maps as PGM, and the
/// evaluation report as JSON.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: Option<&Path>) -> Result<PipelineReport> {
    if cfg.images < 1 {
        return Err(contract("pipeline needs at least one image"));
    }
    cfg.scene.validate()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }

    let stack = BlockStack::random(cfg.seed ^ 0x51ac)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xdec0de);
    let mut gts: Vec<GroundTruth> = Vec::new();
    let mut dets: Vec<Detection> = Vec::new();
    let mut stack_output_shape = (0, 0, 0, 0);

    for image_id in 0..cfg.images as u64 {
        let scene: Scene = generate_scene(&cfg.scene, image_id)?;

        // Oracle detections on the full-resolution annotations.
        dets.extend(oracle_detections(
            &scene.annotations,
            cfg.jitter,
            cfg.score_noise,
            &mut rng,
        )?);
        gts.extend(scene.annotations.iter().cloned());

        // Block stack on a letterboxed-down copy.
        let (small, _) = letterbox(&scene.image, cfg.stack_input)?;
        let trace = stack.forward(&small)?;
        if image_id == 0 {
            stack_output_shape = trace.output.shape();
        }

        if let Some(dir) = out_dir {
            let mut ppm = fs::File::create(dir.join(format!("scene_{image_id:04}.ppm")))?;
            write_ppm(&scene.image, 0, &mut ppm)?;
            for (tap, tensor) in [
                ("branch", &trace.branch_out),
                ("premerge", &trace.pre_merge),
                ("output", &trace.output),
            ] {
                let bytes = channel_mean_pgm(tensor, 0)?;
                fs::write(dir.join(format!("featmap_{image_id:04}_{tap}.pgm")), bytes)?;
            }
        }
    }

    let eval = evaluate(&dets, &gts, &EvalConfig::default())?;
    if let Some(dir) = out_dir {
        let mut gt_file = fs::File::create(dir.join("annotations.jsonl"))?;
        crate::metrics::write_gt_jsonl(&gts, &mut gt_file)?;
        let mut pred_file = fs::File::create(dir.join("predictions.jsonl"))?;
        crate::metrics::write_pred_jsonl(&dets, &mut pred_file)?;
        fs::write(
            dir.join("eval-report.json"),
            serde_json::to_string_pretty(&eval)
                .map_err(|e| crate::error::Error::Malformed(e.to_string()))?,
        )?;
    }

    Ok(PipelineReport {
        images: cfg.images,
        detections: dets.len(),
        ground_truths: gts.len(),
        map50: eval.map50,
        map50_95: eval.map50_95,
        stack_output_shape,
        eval,
    })
}
