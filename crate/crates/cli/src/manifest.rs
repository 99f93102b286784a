//! Run manifests: every command with an output directory records its fully
//! resolved configuration as `run-manifest.json` there, making runs
//! reproducible from the manifest alone.

use std::fs;
use std::path::Path;

use detkit::error::{Error, Result};

pub fn write_manifest<T: serde::Serialize>(dir: &Path, command: &str, resolved: &T) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = serde_json::json!({
        "command": command,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "config": resolved,
    });
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Malformed(e.to_string()))?;
    fs::write(dir.join("run-manifest.json"), text)?;
    Ok(())
}
