use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub base_seed: u64,
    pub tool_version: String,
    pub started: String,
    pub finished: String,
    pub exit_code: u8,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn start(command: &str, config_hash: String, base_seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            config_hash,
            base_seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started: now(),
            finished: String::new(),
            exit_code: 0,
            outputs: Vec::new(),
        }
    }

    pub fn finish(mut self, dir: &Path, outputs: &[PathBuf], exit_code: u8) -> anyhow::Result<PathBuf> {
        self.finished = now();
        self.exit_code = exit_code;
        self.outputs = outputs
            .iter()
            .map(|p| {
                p.strip_prefix(dir)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .replace('\\', "/")
            })
            .collect();
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
