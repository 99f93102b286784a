//! Gradient-descent regression demo: drives predicted boxes onto their
//! targets using the modulated loss with one shared EMA state.

use rand::Rng;

use crate::error::{contract, Result};

use super::{
    fws_loss, iou, wise_gamma, BoxCwh, FocalerConfig, SiouConfig, WiseConfig, WiseState,
};

/// Step size that reliably converges the random pairs drawn by
/// [`random_box_pair`] (unit-scale scenes). Fixed by a tuning run; the
/// convergence check in the acceptance suite pins it.
pub const DEFAULT_DEMO_LR: f64 = 3e-4;

/// Demo configuration. Loss settings ride along so the CLI can override the
/// α/δ/d/u/θ knobs.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RegressConfig {
    pub steps: usize,
    pub lr: f64,
    pub focaler: FocalerConfig,
    pub siou: SiouConfig,
    pub wise: WiseConfig,
}

impl Default for RegressConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: DEFAULT_DEMO_LR,
            focaler: FocalerConfig::default(),
            siou: SiouConfig::default(),
            wise: WiseConfig::default(),
        }
    }
}

/// Per-step aggregates over all pairs.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct StepStats {
    pub step: usize,
    pub mean_loss: f64,
    pub mean_iou: f64,
    pub ema_mean: f64,
    pub mean_gamma: f64,
}

/// Trajectory report of one demo run.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RegressReport {
    pub trajectory: Vec<StepStats>,
    pub final_mean_loss: f64,
    pub final_mean_iou: f64,
    /// Mean loss increased over ten consecutive steps at some point.
    pub diverged: bool,
    pub lr: f64,
    pub steps: usize,
}

/// Plain gradient descent on each predicted box, threading one shared EMA
/// state through every loss evaluation in a fixed order.
///
/// Box extents are floored at 1e-6 after each step so boxes stay valid.
/// Divergence (ten consecutive increases of the mean loss) is reported, not
/// fatal.
pub fn regress_demo(
    pairs: &[(BoxCwh, BoxCwh)],
    cfg: &RegressConfig,
    mut state: WiseState,
) -> Result<RegressReport> {
    if pairs.is_empty() {
        return Err(contract("regression demo needs at least one pair"));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(contract("learning rate must be positive"));
    }
    let mut preds: Vec<BoxCwh> = pairs.iter().map(|(p, _)| *p).collect();
    let targets: Vec<BoxCwh> = pairs.iter().map(|(_, t)| *t).collect();

    let mut trajectory = Vec::with_capacity(cfg.steps);
    let mut diverged = false;
    let mut rising_streak = 0usize;
    let mut prev_mean_loss = f64::INFINITY;

    for step in 0..cfg.steps {
        let mut sum_loss = 0.0;
        let mut sum_iou = 0.0;
        let mut sum_gamma = 0.0;
        for (pred, target) in preds.iter_mut().zip(&targets) {
            let l_iou = 1.0 - iou(pred, target);
            let ema = if state.initialized() {
                state.ema_mean()
            } else {
                l_iou.max(1e-12)
            };
            let beta = if l_iou == 0.0 { 0.0 } else { l_iou / ema };
            sum_gamma += wise_gamma(beta, &cfg.wise);

            let (loss, grad, next) =
                fws_loss(pred, target, state, &cfg.focaler, &cfg.siou, &cfg.wise);
            state = next;
            sum_loss += loss;
            sum_iou += 1.0 - l_iou;

            *pred = BoxCwh::new(
                pred.cx() - cfg.lr * grad[0],
                pred.cy() - cfg.lr * grad[1],
                (pred.w() - cfg.lr * grad[2]).max(1e-6),
                (pred.h() - cfg.lr * grad[3]).max(1e-6),
            )?;
        }
        let n = pairs.len() as f64;
        let mean_loss = sum_loss / n;
        trajectory.push(StepStats {
            step,
            mean_loss,
            mean_iou: sum_iou / n,
            ema_mean: state.ema_mean(),
            mean_gamma: sum_gamma / n,
        });

        if mean_loss > prev_mean_loss {
            rising_streak += 1;
            if rising_streak >= 10 {
                diverged = true;
            }
        } else {
            rising_streak = 0;
        }
        prev_mean_loss = mean_loss;
    }

    // Final metrics after the last update.
    let final_mean_iou =
        preds.iter().zip(&targets).map(|(p, t)| iou(p, t)).sum::<f64>() / pairs.len() as f64;
    let final_mean_loss = trajectory.last().map(|s| s.mean_loss).unwrap_or(0.0);
    Ok(RegressReport {
        trajectory,
        final_mean_loss,
        final_mean_iou,
        diverged,
        lr: cfg.lr,
        steps: cfg.steps,
    })
}

/// Draw a (predicted, target) pair on a unit-scale scene whose initial IoU is
/// at least `min_iou`: the target sits near the origin and the prediction is
/// a jittered copy.
pub fn random_box_pair(rng: &mut impl Rng, min_iou: f64) -> (BoxCwh, BoxCwh) {
    loop {
        let target = BoxCwh::new(
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(0.1..0.5),
            rng.gen_range(0.1..0.5),
        )
        .expect("ranges produce valid boxes");
        let pred = BoxCwh::new(
            target.cx() + rng.gen_range(-0.3..0.3) * target.w(),
            target.cy() + rng.gen_range(-0.3..0.3) * target.h(),
            target.w() * rng.gen_range(0.5..1.8),
            target.h() * rng.gen_range(0.5..1.8),
        )
        .expect("ranges produce valid boxes");
        if iou(&pred, &target) >= min_iou {
            return (pred, target);
        }
    }
}
