//! Run manifest: what a command was asked to do and the hashes of what it
//! read. Written before any other artifact of the command.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub bandwidth: Option<String>,
    pub output: String,
    pub version: String,
    /// Input path → hex SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Remaining command settings.
    pub settings: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str, output: &Path) -> Self {
        RunManifest {
            command: command.into(),
            config: None,
            seed: None,
            bandwidth: None,
            output: output.display().to_string(),
            version: env!("CARGO_PKG_VERSION").into(),
            inputs: BTreeMap::new(),
            settings: BTreeMap::new(),
        }
    }

    pub fn hash_input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn setting(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.settings.insert(key.into(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("x.txt");
        std::fs::write(&f, "abc").unwrap();
        assert_eq!(
            sha256_file(&f).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let mut m = RunManifest::new("generate", dir.path());
        m.seed = Some(3);
        m.hash_input(&f).unwrap();
        m.setting("segments", 18).unwrap();
        let out = dir.path().join("manifest.json");
        m.write(&out).unwrap();
        assert_eq!(RunManifest::read(&out).unwrap(), m);
    }
}
