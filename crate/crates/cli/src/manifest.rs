//! Run manifests: the resolved settings and input fingerprints that
//! make a finished run re-creatable.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use longtail_core::{Error, Result};

use crate::config::RunConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub config: RunConfig,
    pub dataset_sha256: String,
    pub started: u64,
    pub outputs: Vec<(String, PathBuf)>,
}

impl RunManifest {
    pub fn begin(config: RunConfig, dataset_bytes: &[u8]) -> Self {
        RunManifest {
            config,
            dataset_sha256: sha256_hex(dataset_bytes),
            started: unix_now(),
            outputs: Vec::new(),
        }
    }

    pub fn record_output(&mut self, label: &str, path: &Path) {
        self.outputs.push((label.to_string(), path.to_path_buf()));
    }

    /// Serialize and write atomically as key=value lines. The end
    /// timestamp is taken here, at write time.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut lines = self.config.manifest_lines();
        lines.push(format!("dataset.sha256={}", self.dataset_sha256));
        lines.push(format!("build.id={}", build_id()));
        lines.push(format!("run.start_unix={}", self.started));
        lines.push(format!("run.end_unix={}", unix_now()));
        for (label, p) in &self.outputs {
            lines.push(format!("out.{label}={}", p.display()));
        }
        let mut text = lines.join("\n");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

/// Version stamp for manifests; extended by the build environment when
/// a tag description is exported.
pub fn build_id() -> String {
    match option_env!("LT_BUILD_ID") {
        Some(id) if !id.is_empty() => format!("{}+{id}", env!("CARGO_PKG_VERSION")),
        _ => env!("CARGO_PKG_VERSION").to_string(),
    }
}

/// Write via a sibling temp file and rename, so readers never observe
/// a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().ok_or_else(|| {
        Error::Config(format!("output path {} has no parent directory", path.display()))
    })?;
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
