//! Flat binary tensor format for golden tests and kernel export.
//!
//! Layout: four 64-bit little-endian unsigned dims (batch, channels, height,
//! width), then batch·channels·height·width IEEE-754 f64 values, little
//! endian, in (b, c, h, w) row-major order. File extension `.t4`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{malformed, Result};

use super::Tensor4;

const HEADER_BYTES: usize = 32;

/// Serialize a tensor to a writer in `.t4` layout.
pub fn write_t4(t: &Tensor4, out: &mut impl Write) -> std::io::Result<()> {
    let (b, c, h, w) = t.shape();
    for dim in [b, c, h, w] {
        out.write_all(&(dim as u64).to_le_bytes())?;
    }
    for v in t.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Decode a `.t4` byte buffer.
///
/// The declared shape is validated against the actual byte count before any
/// allocation sized from the header, so truncated or dimension-bombed inputs
/// fail cleanly.
pub fn read_t4_bytes(bytes: &[u8]) -> Result<Tensor4> {
    if bytes.len() < HEADER_BYTES {
        return Err(malformed(format!(
            "t4 header needs {} bytes, got {}",
            HEADER_BYTES,
            bytes.len()
        )));
    }
    let mut dims = [0usize; 4];
    for (i, dim) in dims.iter_mut().enumerate() {
        let raw = u64::from_le_bytes(bytes[i * 8..(i + 1) * 8].try_into().unwrap());
        *dim = usize::try_from(raw).map_err(|_| malformed("t4 dimension exceeds usize"))?;
        if *dim == 0 {
            return Err(malformed("t4 dimensions must be >= 1"));
        }
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| malformed("t4 shape overflows"))?;
    let expected = count
        .checked_mul(8)
        .and_then(|n| n.checked_add(HEADER_BYTES))
        .ok_or_else(|| malformed("t4 payload size overflows"))?;
    if bytes.len() != expected {
        return Err(malformed(format!(
            "t4 payload is {} bytes, shape {}x{}x{}x{} requires {}",
            bytes.len(),
            dims[0],
            dims[1],
            dims[2],
            dims[3],
            expected
        )));
    }
    let mut values = Vec::with_capacity(count);
    for chunk in bytes[HEADER_BYTES..].chunks_exact(8) {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(malformed("t4 values must be finite"));
        }
        values.push(v);
    }
    Tensor4::new(dims[0], dims[1], dims[2], dims[3], values)
}

/// Read a `.t4` tensor from a reader (consumes it to the end).
pub fn read_t4(input: &mut impl Read) -> Result<Tensor4> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    read_t4_bytes(&bytes)
}

/// Write a tensor to a `.t4` file.
pub fn save_t4(t: &Tensor4, path: impl AsRef<Path>) -> Result<()> {
    let mut file = fs::File::create(path)?;
    write_t4(t, &mut file)?;
    Ok(())
}

/// Load a tensor from a `.t4` file.
pub fn load_t4(path: impl AsRef<Path>) -> Result<Tensor4> {
    read_t4_bytes(&fs::read(path)?)
}
