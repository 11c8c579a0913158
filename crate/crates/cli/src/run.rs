//! Output directory handling and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use slowlight::io::to_json;
use slowlight::Result;

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
pub struct Timestamps {
    /// Taken from `SOURCE_DATE_EPOCH`; wall-clock time is never recorded so
    /// that repeated runs stay byte-identical.
    pub source_date_epoch: Option<u64>,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub tool_version: String,
    pub timestamps: Timestamps,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

/// Collects the files written by one command.
pub struct Run {
    out: PathBuf,
    manifest: RunManifest,
}

impl Run {
    pub fn new(out: &Path, command: &str, resolved_config: &str) -> Result<Self> {
        std::fs::create_dir_all(out)?;
        let epoch = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok());
        Ok(Run {
            out: out.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                config_hash: sha256_hex(resolved_config.as_bytes()),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                timestamps: Timestamps { source_date_epoch: epoch },
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
            },
        })
    }

    pub fn input(&mut self, name: &str, bytes: &[u8]) {
        self.manifest.inputs.insert(name.to_string(), sha256_hex(bytes));
    }

    pub fn write(&mut self, name: &str, content: &str) -> Result<()> {
        std::fs::write(self.out.join(name), content)?;
        self.manifest.outputs.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = to_json(value)? + "\n";
        self.write(name, &text)
    }

    pub fn finish(mut self) -> Result<()> {
        self.manifest.outputs.sort();
        let text = to_json(&self.manifest)? + "\n";
        std::fs::write(self.out.join(MANIFEST), text)?;
        Ok(())
    }
}
