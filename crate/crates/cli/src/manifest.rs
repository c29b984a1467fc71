use crate::error::CliResult;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    ExtractGvst,
    Estimate,
    Benchmark,
    Ks,
    Sweep,
}

/// Record of one run. It holds no clock time, so a rerun with the same
/// config writes the same bytes.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: Command,
    pub tool_version: &'static str,
    pub config_digest: String,
    pub seed: Option<u64>,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

/// Pointer from an output file back to its manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RunRef {
    pub manifest: String,
    pub config_digest: String,
}

/// SHA-256 over the resolved `key=value` lines in key order.
pub fn config_digest(config: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (k, v) in config {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects outputs as they are written and writes the manifest last.
pub struct Run {
    manifest: RunManifest,
    manifest_path: PathBuf,
}

impl Run {
    pub fn new(
        command: Command,
        config: BTreeMap<String, String>,
        seed: Option<u64>,
        inputs: Vec<String>,
        manifest_path: PathBuf,
    ) -> Self {
        Self {
            manifest: RunManifest {
                command,
                tool_version: env!("CARGO_PKG_VERSION"),
                config_digest: config_digest(&config),
                seed,
                config,
                inputs,
                outputs: Vec::new(),
            },
            manifest_path,
        }
    }

    pub fn reference(&self) -> RunRef {
        RunRef {
            manifest: self.manifest_path.display().to_string(),
            config_digest: self.manifest.config_digest.clone(),
        }
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        std::fs::write(path, bytes)?;
        self.manifest.outputs.push(path.display().to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(path, &bytes)
    }

    pub fn finish(self) -> CliResult<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(&self.manifest)?;
        bytes.push(b'\n');
        std::fs::write(&self.manifest_path, bytes)?;
        Ok(self.manifest_path)
    }
}

/// `dir/out.csv` -> `dir/out.manifest.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    out.with_file_name(format!("{stem}.manifest.json"))
}
