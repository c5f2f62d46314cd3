//! Provenance headers and all-or-nothing file writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub version: String,
    pub timestamp: String,
}

impl Manifest {
    /// `config` is every byte that determines the output: input file
    /// contents and the relevant arguments.
    pub fn new(
        command: &str,
        inputs: &[&Path],
        outputs: &[&Path],
        config: &[u8],
        seed: Option<u64>,
    ) -> Self {
        let show = |p: &&Path| p.display().to_string();
        Self {
            command: command.to_string(),
            inputs: inputs.iter().map(show).collect(),
            outputs: outputs.iter().map(show).collect(),
            config_sha256: hex::encode(Sha256::digest(config)),
            seed,
            version: format!("biphoton {}", env!("CARGO_PKG_VERSION")),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    /// `#`-prefixed lines for CSV outputs, timestamp last.
    pub fn csv_header(&self) -> String {
        let seed = self
            .seed
            .map_or_else(|| "none".to_string(), |s| s.to_string());
        format!(
            "# command: {}\n# inputs: {}\n# outputs: {}\n# config_sha256: {}\n# seed: {}\n# version: {}\n# timestamp: {}\n",
            self.command,
            self.inputs.join(" "),
            self.outputs.join(" "),
            self.config_sha256,
            seed,
            self.version,
            self.timestamp,
        )
    }
}

/// Writes `body` to a temporary file beside `path` and renames it into
/// place, so readers never see a partial file.
pub fn write_atomic(path: &Path, body: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)
        .with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(body)?;
    tmp.flush()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// CSV body behind a manifest header.
pub fn write_csv(
    path: &Path,
    manifest: &Manifest,
    fill: impl FnOnce(&mut Vec<u8>) -> Result<()>,
) -> Result<()> {
    let mut body = manifest.csv_header().into_bytes();
    fill(&mut body)?;
    write_atomic(path, &body)
}

/// JSON object with the manifest stored under `manifest`.
pub fn write_json<T: Serialize>(path: &Path, manifest: &Manifest, value: &T) -> Result<()> {
    let mut v = serde_json::to_value(value)?;
    match v.as_object_mut() {
        Some(obj) => {
            obj.insert("manifest".into(), serde_json::to_value(manifest)?);
        }
        None => v = serde_json::json!({ "manifest": manifest, "data": v }),
    }
    let mut body = serde_json::to_vec_pretty(&v)?;
    body.push(b'\n');
    write_atomic(path, &body)
}

/// Sibling file: `states.csv` with `rho.json` gives `states.rho.json`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}
