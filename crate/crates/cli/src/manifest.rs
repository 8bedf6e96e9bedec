use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

/// Audit record written next to each command's data outputs. Carries wall
/// time, so manifests are the one output exempt from byte-reproducibility.
#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub outputs: Vec<String>,
    pub wall_time_ms: u128,
}

/// FNV-1a over whatever bytes identify the run's configuration (a config
/// file, or the rendered flag set); stable across platforms.
pub fn config_hash(bytes: &[u8]) -> String {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

pub struct ManifestBuilder {
    command: String,
    config_hash: String,
    seed: u64,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config_bytes: &[u8], seed: u64) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            config_hash: config_hash(config_bytes),
            seed,
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Writes `<primary>.manifest.json` atomically (temp file + rename).
    pub fn write(self, primary_output: &Path) -> std::io::Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command,
            config_hash: self.config_hash,
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: self
                .outputs
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
            wall_time_ms: self.started.elapsed().as_millis(),
        };
        let mut path = primary_output.as_os_str().to_owned();
        path.push(".manifest.json");
        let path = PathBuf::from(path);
        let tmp = path.with_extension("json.tmp");
        let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&tmp, body)?;
        std::fs::rename(&tmp, &path)?;
        Ok(path)
    }
}
