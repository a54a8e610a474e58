//! Reproducibility manifest written next to every command's outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(sha256_hex(&bytes))
}

impl Manifest {
    /// The config is hashed in its compact JSON form.
    pub fn new(command: &str, seed: u64, config: &impl Serialize) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let compact = serde_json::to_vec(&config)?;
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_sha256: sha256_hex(&compact),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Records an output by its path relative to `root`, so manifests from
    /// different output directories compare equal.
    pub fn add_output(&mut self, root: impl AsRef<Path>, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let shown = path.strip_prefix(root.as_ref()).unwrap_or(path);
        self.outputs.push(FileDigest {
            path: shown.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn outputs_are_relative_to_root() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.txt");
        std::fs::write(&f, "x").unwrap();
        let mut m = Manifest::new("test", 1, &serde_json::json!({"k": 1})).unwrap();
        m.add_output(dir.path(), &f).unwrap();
        assert_eq!(m.outputs[0].path, "a.txt");
        assert_eq!(m.outputs[0].sha256, sha256_hex(b"x"));
    }
}
