//! Bounding-box regression loss: IoU with linear high-overlap renormalization,
//! angle/distance/shape geometric penalties, and a non-monotonic difficulty
//! modulation driven by an exponential moving average of the IoU loss.
//!
//! The loss for a predicted box B_p against a target B_t is
//!
//! ```text
//! core = (1 − focaler(IoU)) + (Dist + Shape) / 2
//! β    = (1 − IoU_raw) / E[1 − IoU_raw]          (EMA over recent samples)
//! loss = core · γ(β),   γ(β) = β / (δ · α^(β−δ))
//! ```
//!
//! γ rises from γ(0) = 0 to a single maximum at β = 1/ln α and decays beyond
//! it, so moderately hard samples get emphasis while trivial and outlier ones
//! are damped. γ(δ) = 1 exactly. An alternative combination multiplies the
//! core by β^(1+δ) instead (see [`CombinationMode`]); it is monotone in β and
//! kept only for comparison.
//!
//! Gradients are analytic (forward-mode, see [`jet`]) with the modulation
//! factor and the EMA treated as constants by default.

mod jet;
mod regress;

pub use regress::{
    random_box_pair, regress_demo, RegressConfig, RegressReport, StepStats, DEFAULT_DEMO_LR,
};

use jet::{Jet, Real};

use crate::error::{contract, Result};

/// Axis-aligned box as center plus extent. Extents are strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoxCwh {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl BoxCwh {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if ![cx, cy, w, h].iter().all(|v| v.is_finite()) {
            return Err(contract("box coordinates must be finite"));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(contract("box extents must be positive"));
        }
        Ok(Self { cx, cy, w, h })
    }

    /// Build from corners (x1 < x2, y1 < y2).
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        Self::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Corner representation (x1, y1, x2, y2).
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }
}

/// Corner quadruple of a box.
pub fn cwh_to_corners(b: &BoxCwh) -> (f64, f64, f64, f64) {
    b.corners()
}

/// Linear renormalization bounds for the IoU: values map through
/// clip(|IoU − d| / (u − d), 0, 1).
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct FocalerConfig {
    pub d: f64,
    pub u: f64,
}

impl Default for FocalerConfig {
    fn default() -> Self {
        Self { d: 0.0, u: 0.95 }
    }
}

impl FocalerConfig {
    pub fn new(d: f64, u: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&d) || !(d < u && u <= 1.0) {
            return Err(contract("focaler bounds require 0 <= d < u <= 1"));
        }
        Ok(Self { d, u })
    }
}

/// Geometry-penalty configuration: the shape exponent θ and the stabilizer
/// added under the angle's square root.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct SiouConfig {
    pub theta: f64,
    pub eps_angle: f64,
    /// Apply θ to both shape terms instead of only the height term.
    pub symmetric_shape_exponent: bool,
}

impl Default for SiouConfig {
    fn default() -> Self {
        Self {
            theta: 4.0,
            eps_angle: 1e-4,
            symmetric_shape_exponent: false,
        }
    }
}

impl SiouConfig {
    pub fn new(theta: f64, eps_angle: f64, symmetric_shape_exponent: bool) -> Result<Self> {
        if !(theta >= 1.0 && theta.is_finite()) {
            return Err(contract("shape exponent theta must be >= 1"));
        }
        if !(eps_angle > 0.0 && eps_angle.is_finite()) {
            return Err(contract("angle stabilizer must be positive"));
        }
        Ok(Self {
            theta,
            eps_angle,
            symmetric_shape_exponent,
        })
    }
}

/// How the difficulty modulation multiplies the core loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
pub enum CombinationMode {
    /// core · γ(β) — the non-monotonic modulation.
    #[default]
    GammaModulated,
    /// core · β · β^δ — a monotone product, kept for comparison.
    LiteralProduct,
}

/// Modulation parameters: α controls the decay past the γ maximum, δ is the
/// difficulty at which γ equals one.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct WiseConfig {
    pub alpha: f64,
    pub delta: f64,
    /// Treat γ and the EMA as constants in the gradient (default).
    pub detach_modulation: bool,
    pub combination: CombinationMode,
}

impl Default for WiseConfig {
    fn default() -> Self {
        Self {
            alpha: 1.9,
            delta: 3.0,
            detach_modulation: true,
            combination: CombinationMode::GammaModulated,
        }
    }
}

impl WiseConfig {
    pub fn new(alpha: f64, delta: f64) -> Result<Self> {
        if !(alpha > 1.0 && alpha.is_finite()) {
            return Err(contract("alpha must be > 1 so the modulation is non-monotonic"));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(contract("delta must be positive"));
        }
        Ok(Self {
            alpha,
            delta,
            ..Self::default()
        })
    }
}

/// Running difficulty tracker: an exponential moving average of the IoU loss.
///
/// Single-writer contract: one training loop owns a state and threads it
/// through [`fws_loss`] calls; concurrent evaluation needs per-thread states.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct WiseState {
    ema_mean: f64,
    momentum: f64,
    initialized: bool,
}

impl WiseState {
    /// Momentum 1e-2, uninitialized: the first observation warm-starts the mean.
    pub fn new() -> Self {
        Self {
            ema_mean: 0.0,
            momentum: 1e-2,
            initialized: false,
        }
    }

    pub fn with_momentum(momentum: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum <= 1.0) {
            return Err(contract("momentum must lie in (0, 1]"));
        }
        Ok(Self {
            ema_mean: 0.0,
            momentum,
            initialized: false,
        })
    }

    pub fn ema_mean(&self) -> f64 {
        self.ema_mean
    }

    pub fn initialized(&self) -> bool {
        self.initialized
    }
}

impl Default for WiseState {
    fn default() -> Self {
        Self::new()
    }
}

/// Fold one IoU-loss observation into the tracker. The first call warm-starts
/// the mean at the observation (floored at 1e-12 to keep the mean positive);
/// later calls move it by `momentum · (l_iou − mean)`, which leaves constant
/// streams bit-exact.
pub fn ema_update(state: WiseState, l_iou: f64) -> WiseState {
    let mut next = state;
    if state.initialized {
        next.ema_mean = state.ema_mean + state.momentum * (l_iou - state.ema_mean);
    } else {
        next.ema_mean = l_iou.max(1e-12);
        next.initialized = true;
    }
    next
}

// ---------------------------------------------------------------------------
// Box geometry, written once over the Real abstraction.
// ---------------------------------------------------------------------------

struct BoxR<R> {
    cx: R,
    cy: R,
    w: R,
    h: R,
}

impl BoxR<f64> {
    fn plain(b: &BoxCwh) -> Self {
        BoxR {
            cx: b.cx,
            cy: b.cy,
            w: b.w,
            h: b.h,
        }
    }
}

impl BoxR<Jet> {
    /// Predicted box as the four independent variables.
    fn pred(b: &BoxCwh) -> Self {
        BoxR {
            cx: Jet::variable(b.cx, 0),
            cy: Jet::variable(b.cy, 1),
            w: Jet::variable(b.w, 2),
            h: Jet::variable(b.h, 3),
        }
    }

    fn target(b: &BoxCwh) -> Self {
        BoxR {
            cx: Jet::constant(b.cx),
            cy: Jet::constant(b.cy),
            w: Jet::constant(b.w),
            h: Jet::constant(b.h),
        }
    }
}

fn corners_r<R: Real>(b: &BoxR<R>) -> (R, R, R, R) {
    let half = R::lit(0.5);
    (
        b.cx - b.w * half,
        b.cy - b.h * half,
        b.cx + b.w * half,
        b.cy + b.h * half,
    )
}

fn iou_r<R: Real>(p: &BoxR<R>, t: &BoxR<R>) -> R {
    let (px1, py1, px2, py2) = corners_r(p);
    let (tx1, ty1, tx2, ty2) = corners_r(t);
    let zero = R::lit(0.0);
    let iw = (px2.min(tx2) - px1.max(tx1)).max(zero);
    let ih = (py2.min(ty2) - py1.max(ty1)).max(zero);
    let inter = iw * ih;
    let union = p.w * p.h + t.w * t.h - inter;
    inter / union
}

fn focaler_r<R: Real>(iou: R, cfg: &FocalerConfig) -> R {
    ((iou - R::lit(cfg.d)).abs() / R::lit(cfg.u - cfg.d)).clip01()
}

fn siou_terms_r<R: Real>(p: &BoxR<R>, t: &BoxR<R>, cfg: &SiouConfig) -> (R, R, R) {
    let (one, two) = (R::lit(1.0), R::lit(2.0));
    let dx = (p.cx - t.cx).abs();
    let dy = (p.cy - t.cy).abs();

    let (px1, py1, px2, py2) = corners_r(p);
    let (tx1, ty1, tx2, ty2) = corners_r(t);
    let w_box = px2.max(tx2) - px1.min(tx1);
    let h_box = py2.max(ty2) - py1.min(ty1);

    // angle = sin(2·arcsin(r)) − 2 = 2r√(1 − r²) − 2 with
    // r = min(dx, dy) / √(dx² + dy² + ε_eff); r ≤ 1/√2, so the root is safe.
    // The stabilizer is taken relative to the enclosing-box scale so the
    // whole loss stays scale-invariant; for unit-scale (normalized) boxes it
    // matches a plain additive ε.
    let eps = R::lit(cfg.eps_angle) * (w_box * w_box + h_box * h_box);
    let r = dx.min(dy) / (dx * dx + dy * dy + eps).sqrt();
    let angle = two * r * (one - r * r).sqrt() - two;

    let dist = two - (angle * dx / w_box).exp() - (angle * dy / h_box).exp();

    let s_w = one - (-((p.w - t.w).abs() / p.w.max(t.w))).exp();
    let s_h = one - (-((p.h - t.h).abs() / p.h.max(t.h))).exp();
    let shape = if cfg.symmetric_shape_exponent {
        s_w.powf_const(cfg.theta) + s_h.powf_const(cfg.theta)
    } else {
        s_w + s_h.powf_const(cfg.theta)
    };

    (angle, dist, shape)
}

fn core_loss_r<R: Real>(p: &BoxR<R>, t: &BoxR<R>, fcfg: &FocalerConfig, scfg: &SiouConfig) -> R {
    let l_iou = R::lit(1.0) - focaler_r(iou_r(p, t), fcfg);
    let (_, dist, shape) = siou_terms_r(p, t, scfg);
    l_iou + (dist + shape) * R::lit(0.5)
}

// ---------------------------------------------------------------------------
// Public scalar operations.
// ---------------------------------------------------------------------------

/// Rectangle intersection over union, in [0, 1]; 0 for disjoint boxes.
pub fn iou(bp: &BoxCwh, bt: &BoxCwh) -> f64 {
    iou_r(&BoxR::plain(bp), &BoxR::plain(bt))
}

/// clip(|IoU − d| / (u − d), 0, 1).
pub fn focaler_normalize(iou_raw: f64, cfg: &FocalerConfig) -> f64 {
    focaler_r(iou_raw, cfg)
}

/// The angle, distance, and shape penalty terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiouTerms {
    pub angle: f64,
    pub dist: f64,
    pub shape: f64,
}

pub fn siou_terms(bp: &BoxCwh, bt: &BoxCwh, cfg: &SiouConfig) -> SiouTerms {
    let (angle, dist, shape) = siou_terms_r(&BoxR::plain(bp), &BoxR::plain(bt), cfg);
    SiouTerms { angle, dist, shape }
}

/// Unmodulated loss: (1 − focaler(IoU)) + (Dist + Shape)/2.
pub fn siou_core_loss(bp: &BoxCwh, bt: &BoxCwh, fcfg: &FocalerConfig, scfg: &SiouConfig) -> f64 {
    core_loss_r(&BoxR::plain(bp), &BoxR::plain(bt), fcfg, scfg)
}

/// The difficulty modulation γ(β) = β / (δ · α^(β−δ)).
pub fn wise_gamma(beta: f64, cfg: &WiseConfig) -> f64 {
    beta / (cfg.delta * cfg.alpha.powf(beta - cfg.delta))
}

fn wise_gamma_jet(beta: Jet, cfg: &WiseConfig) -> Jet {
    let alpha_pow = ((beta - Jet::constant(cfg.delta)) * Jet::constant(cfg.alpha.ln())).exp();
    beta / (Jet::constant(cfg.delta) * alpha_pow)
}

/// Full loss at one sample: value, gradient with respect to the predicted
/// box's (cx, cy, w, h), and the advanced EMA state.
///
/// β is the raw IoU loss relative to the EMA mean (the pre-update mean once
/// the state is initialized; the first sample warm-starts the mean and sees
/// β = 1). With `detach_modulation` the gradient is γ(β)·∇core, holding γ and
/// the mean constant; otherwise differentiation runs through γ as well.
pub fn fws_loss(
    bp: &BoxCwh,
    bt: &BoxCwh,
    state: WiseState,
    fcfg: &FocalerConfig,
    scfg: &SiouConfig,
    wcfg: &WiseConfig,
) -> (f64, [f64; 4], WiseState) {
    let iou_raw = iou(bp, bt);
    let l_iou_raw = 1.0 - iou_raw;
    let ema = if state.initialized() {
        state.ema_mean()
    } else {
        l_iou_raw.max(1e-12)
    };
    let beta = if l_iou_raw == 0.0 { 0.0 } else { l_iou_raw / ema };

    let p = BoxR::pred(bp);
    let t = BoxR::target(bt);
    let core = core_loss_r(&p, &t, fcfg, scfg);

    let (loss, grad) = if wcfg.detach_modulation {
        let m = match wcfg.combination {
            CombinationMode::GammaModulated => wise_gamma(beta, wcfg),
            CombinationMode::LiteralProduct => beta * beta.powf(wcfg.delta),
        };
        (core.v * m, core.d.map(|g| g * m))
    } else {
        let iou_jet = iou_r(&p, &t);
        let beta_jet = (Jet::constant(1.0) - iou_jet) / Jet::constant(ema);
        let m_jet = match wcfg.combination {
            CombinationMode::GammaModulated => wise_gamma_jet(beta_jet, wcfg),
            CombinationMode::LiteralProduct => {
                beta_jet * beta_jet.powf_const(wcfg.delta)
            }
        };
        let full = core * m_jet;
        (full.v, full.d)
    };

    let next = ema_update(state, l_iou_raw);
    (loss, grad, next)
}
