use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileHash {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
        Ok(Self { path: path.to_path_buf(), sha256: hex::encode(Sha256::digest(bytes)) })
    }
}

/// Record of one artifact-producing run, written next to its first output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub tool_version: String,
    pub timestamp: String,
}

impl RunManifest {
    pub fn write(command: &str, config: serde_json::Value, inputs: &[&Path], outputs: &[&Path]) -> Result<PathBuf> {
        let m = RunManifest {
            command: command.to_string(),
            config,
            inputs: inputs.iter().map(|p| FileHash::of(p)).collect::<Result<_>>()?,
            outputs: outputs.iter().map(|p| FileHash::of(p)).collect::<Result<_>>()?,
            tool_version: filtprune::plan::TOOL_VERSION.to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        };
        let mut path = outputs[0].as_os_str().to_owned();
        path.push(".manifest.json");
        let path = PathBuf::from(path);
        std::fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
