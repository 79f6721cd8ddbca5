//! Run manifests: a config snapshot, per-stage timings, and a checksummed
//! inventory of every file the command produced.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use patchlens::config::ExperimentConfig;
use patchlens::{Error, Result};
use sha2::{Digest, Sha256};

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        let _ = write!(hex, "{b:02x}");
    }
    Ok(hex)
}

/// Collects what a command did and writes it as a dotted-key text file.
/// Writing re-hashes every listed output and fails if anything changed.
pub struct RunManifest {
    command: String,
    out_dir: PathBuf,
    header: Vec<(String, String)>,
    timings: Vec<(String, Duration)>,
    outputs: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig, out_dir: &Path) -> Self {
        let mut header = vec![
            ("manifest.command".to_string(), command.to_string()),
            (
                "manifest.crate_version".to_string(),
                env!("CARGO_PKG_VERSION").to_string(),
            ),
            ("manifest.seed".to_string(), config.seed.to_string()),
        ];
        for line in config.to_text().lines() {
            if let Some((k, v)) = line.split_once(" = ") {
                header.push((format!("config.{k}"), v.to_string()));
            }
        }
        Self {
            command: command.to_string(),
            out_dir: out_dir.to_path_buf(),
            header,
            timings: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_kv(&mut self, key: &str, value: impl ToString) {
        self.header.push((key.to_string(), value.to_string()));
    }

    pub fn add_timing(&mut self, stage: &str, elapsed: Duration) {
        self.timings.push((stage.to_string(), elapsed));
    }

    /// Registers an output file, recording its checksum.
    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        let rel = path
            .strip_prefix(&self.out_dir)
            .unwrap_or(path)
            .to_string_lossy()
            .into_owned();
        let hash = sha256_file(path)?;
        self.outputs.push((rel, hash));
        Ok(())
    }

    /// Verifies every listed output still exists with its recorded checksum,
    /// then writes `manifest_<command>.txt` into the out directory.
    pub fn write(&self) -> Result<PathBuf> {
        for (rel, recorded) in &self.outputs {
            let current = sha256_file(&self.out_dir.join(rel))?;
            if &current != recorded {
                return Err(Error::Data(format!(
                    "output {rel} changed after it was recorded"
                )));
            }
        }
        let mut text = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(text, "{k} = {v}");
        }
        for (stage, d) in &self.timings {
            let _ = writeln!(text, "timing.{stage}_ms = {:.3}", d.as_secs_f64() * 1e3);
        }
        for (rel, hash) in &self.outputs {
            let _ = writeln!(text, "output.{rel}.sha256 = {hash}");
        }
        let path = self.out_dir.join(format!("manifest_{}.txt", self.command));
        std::fs::write(&path, text)?;
        Ok(path)
    }
}
