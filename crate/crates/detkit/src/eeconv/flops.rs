//! Multiply-accumulate counting for the zero-overhead claim: a fused
//! edge-enhanced convolution costs exactly what a vanilla 3×3 convolution
//! costs, and the four-branch training composite costs exactly four times
//! that.

use crate::error::{contract, Result};

/// Shape of a stride-1, same-padded 3×3 convolution workload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvShape {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvShape {
    pub fn new(
        batch: usize,
        in_channels: usize,
        out_channels: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        if batch == 0 || in_channels == 0 || out_channels == 0 || height == 0 || width == 0 {
            return Err(contract("conv shape dimensions must be >= 1"));
        }
        Ok(Self {
            batch,
            in_channels,
            out_channels,
            height,
            width,
        })
    }
}

/// Multiply-accumulate count of a convolution:
/// out_elems · in_channels_per_group · k_h · k_w.
pub fn conv_macs(
    batch: usize,
    out_channels: usize,
    out_h: usize,
    out_w: usize,
    in_channels_per_group: usize,
    kernel_h: usize,
    kernel_w: usize,
) -> u64 {
    (batch * out_channels * out_h * out_w) as u64
        * (in_channels_per_group * kernel_h * kernel_w) as u64
}

/// MAC counts for the three evaluation strategies of an edge-enhanced
/// convolution over one workload shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct EeconvMacs {
    /// Vanilla 3×3 convolution of the same shape.
    pub vanilla: u64,
    /// The fused single-kernel path. Always equals `vanilla`.
    pub fused: u64,
    /// Four branches evaluated separately and summed. Always 4 × `vanilla`.
    pub train_composite: u64,
}

/// MAC counts for an edge-enhanced convolution at the given shape
/// (stride 1, same padding: output spatial dims equal input dims).
pub fn eeconv_macs(shape: &ConvShape) -> EeconvMacs {
    let vanilla = conv_macs(
        shape.batch,
        shape.out_channels,
        shape.height,
        shape.width,
        shape.in_channels,
        3,
        3,
    );
    EeconvMacs {
        vanilla,
        fused: vanilla,
        train_composite: 4 * vanilla,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_count_for_documented_shape() {
        // 1×8×16×16 input, 8→8 channels, 3×3, same padding.
        let shape = ConvShape::new(1, 8, 8, 16, 16).unwrap();
        let macs = eeconv_macs(&shape);
        assert_eq!(macs.vanilla, 147_456);
        assert_eq!(macs.fused, 147_456);
        assert_eq!(macs.train_composite, 4 * 147_456);
    }

    #[test]
    fn fused_equals_vanilla_for_assorted_shapes() {
        let shapes = [
            (1, 1, 1, 1, 1),
            (1, 3, 16, 64, 64),
            (2, 8, 8, 16, 16),
            (4, 32, 64, 20, 40),
            (1, 7, 13, 9, 11),
        ];
        for (b, ic, oc, h, w) in shapes {
            let shape = ConvShape::new(b, ic, oc, h, w).unwrap();
            let macs = eeconv_macs(&shape);
            assert_eq!(macs.fused, macs.vanilla);
            assert_eq!(macs.train_composite, 4 * macs.vanilla);
        }
    }

    #[test]
    fn grouped_macs_use_channels_per_group() {
        // Depthwise k×k: one input channel per group.
        assert_eq!(conv_macs(1, 8, 10, 10, 1, 31, 31), 8 * 100 * 961);
    }
}
