//! Building blocks for small-object detection, implemented from scratch and
//! verified against independent oracles:
//!
//! - re-parameterizable edge-enhanced convolution (difference-convolution
//!   branches fused into a single 3×3 kernel with absorbed batch norm),
//! - lossless space-to-depth downsampling,
//! - dual-domain (frequency/spatial/channel) multi-scale attention with a
//!   cross-stage partial wrapper,
//! - the Focaler-Wise-SIoU bounding-box regression loss with analytic
//!   gradients and an EMA difficulty tracker,
//! - COCO-protocol detection metrics,
//! - a deterministic synthetic small-object scene generator.
//!
//! Everything computes in `f64`; all forwards are pure functions of their
//! inputs, safe to share across threads.

pub mod attention;
pub mod config;
pub mod eeconv;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod pipeline;
pub mod spd;
pub mod synthgen;
pub mod tensor;

pub use error::{Error, Result};
