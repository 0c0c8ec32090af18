//! Run manifest: the resolved configuration and a content hash of every
//! artifact a command wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::CliError;

/// FNV-1a 64 over a byte stream; good enough to detect artifact drift.
pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: PathBuf,
    pub overrides: Vec<String>,
    pub resolved_config: Value,
    /// artifact file name → fnv64 of its bytes (hex).
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config_path: &Path,
        overrides: &[String],
        resolved_config: Value,
    ) -> Self {
        RunManifest {
            command: command.to_string(),
            config_path: config_path.to_path_buf(),
            overrides: overrides.to_vec(),
            resolved_config,
            artifacts: BTreeMap::new(),
        }
    }

    /// Hashes a freshly written artifact into the manifest.
    pub fn record(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Runtime(format!("cannot hash {}: {e}", path.display())))?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.artifacts.insert(name, format!("{:016x}", fnv64(&bytes)));
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf, CliError> {
        let path = out_dir.join("run_manifest.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Runtime(format!("manifest serialization: {e}")))?;
        std::fs::write(&path, text)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv64(b"a"), fnv64(b"a"));
        assert_ne!(fnv64(b"a"), fnv64(b"b"));
    }
}
