//! Fused-kernel export/import: weights and bias as `.t4` tensors plus a JSON
//! sidecar recording the channel layout and activation.

use std::fs;
use std::path::Path;

use crate::error::{malformed, Result};
use crate::tensor::{load_t4, save_t4, Activation, Tensor4};

use super::FusedConv;

/// Sidecar metadata stored next to the exported tensors.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusedSidecar {
    pub out_channels: usize,
    pub in_channels: usize,
    pub activation: Activation,
}

/// Parse a sidecar JSON buffer.
pub fn parse_sidecar_bytes(bytes: &[u8]) -> Result<FusedSidecar> {
    serde_json::from_slice(bytes).map_err(|e| malformed(format!("fused sidecar: {e}")))
}

/// Write `<stem>.kernel.t4`, `<stem>.bias.t4` and `<stem>.json` into `dir`.
pub fn export_fused(fused: &FusedConv, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
    let dir = dir.as_ref();
    save_t4(fused.weights(), dir.join(format!("{stem}.kernel.t4")))?;
    let bias = Tensor4::new(1, fused.out_channels(), 1, 1, fused.bias().to_vec())?;
    save_t4(&bias, dir.join(format!("{stem}.bias.t4")))?;
    let sidecar = FusedSidecar {
        out_channels: fused.out_channels(),
        in_channels: fused.in_channels(),
        activation: fused.activation(),
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| malformed(format!("fused sidecar: {e}")))?;
    fs::write(dir.join(format!("{stem}.json")), json)?;
    Ok(())
}

/// Load a fused convolution previously written by [`export_fused`], checking
/// the sidecar against the tensor shapes.
pub fn import_fused(dir: impl AsRef<Path>, stem: &str) -> Result<FusedConv> {
    let dir = dir.as_ref();
    let sidecar = parse_sidecar_bytes(&fs::read(dir.join(format!("{stem}.json")))?)?;
    let weights = load_t4(dir.join(format!("{stem}.kernel.t4")))?;
    let bias = load_t4(dir.join(format!("{stem}.bias.t4")))?;
    if weights.batch() != sidecar.out_channels || weights.channels() != sidecar.in_channels {
        return Err(malformed(format!(
            "kernel shape {:?} does not match sidecar {}x{}",
            weights.shape(),
            sidecar.out_channels,
            sidecar.in_channels
        )));
    }
    if bias.shape() != (1, sidecar.out_channels, 1, 1) {
        return Err(malformed(format!(
            "bias shape {:?} does not match sidecar out_channels {}",
            bias.shape(),
            sidecar.out_channels
        )));
    }
    FusedConv::new(weights, bias.values().to_vec(), sidecar.activation)
}
