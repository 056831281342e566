//! Run manifests: every artifact gets a `<file>.manifest.json` sidecar naming
//! the stage, its input files with content hashes, the seed and the config
//! hash. Downstream stages check the recorded hashes before reading.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::jsonl;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Hash of the compact JSON encoding of a configuration value. Struct fields
/// serialize in declaration order, so equal configs hash equally.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(config)?))
}

/// Per-stage seed fanned out from the root seed.
pub fn derive_seed(root: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(stage.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config_hash: String,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<InputRecord>,
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

impl Manifest {
    pub fn new(stage: &str, seed: Option<u64>, config_hash: String) -> Self {
        Manifest {
            stage: stage.to_string(),
            version: VERSION.to_string(),
            seed,
            config_hash,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256: file_sha256(path)?,
        });
        Ok(self)
    }

    /// Hashes each output and writes a sidecar next to every one of them.
    pub fn write(mut self, outputs: &[&Path]) -> Result<()> {
        self.outputs = outputs
            .iter()
            .map(|p| {
                Ok(InputRecord {
                    path: p.display().to_string(),
                    sha256: file_sha256(p)?,
                })
            })
            .collect::<Result<_>>()?;
        for p in outputs {
            jsonl::write_json(&manifest_path(p), &self)?;
        }
        Ok(())
    }

    pub fn read(artifact: &Path) -> Result<Option<Manifest>> {
        let path = manifest_path(artifact);
        if !path.exists() {
            return Ok(None);
        }
        jsonl::read_json(&path).map(Some)
    }
}

/// Checks that `artifact` still has the content its manifest recorded.
/// Artifacts without a manifest (hand-made inputs) pass.
pub fn verify(artifact: &Path) -> Result<()> {
    let Some(m) = Manifest::read(artifact)? else {
        return Ok(());
    };
    let actual = file_sha256(artifact)?;
    let name = artifact.display().to_string();
    let recorded = m
        .outputs
        .iter()
        .find(|o| Path::new(&o.path).file_name() == artifact.file_name())
        .ok_or_else(|| Error::ArtifactMismatch(format!("{name}: not listed in its manifest")))?;
    if recorded.sha256 != actual {
        return Err(Error::ArtifactMismatch(format!(
            "{name}: content hash {actual} differs from manifest {} (produced by stage {}); rerun that stage or pass --force",
            recorded.sha256, m.stage
        )));
    }
    Ok(())
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
    fn seeds_differ_by_stage_and_root() {
        assert_eq!(derive_seed(1, "split"), derive_seed(1, "split"));
        assert_ne!(derive_seed(1, "split"), derive_seed(1, "cv"));
        assert_ne!(derive_seed(1, "split"), derive_seed(2, "split"));
    }

    #[test]
    fn tampered_artifact_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("seqs.jsonl");
        std::fs::write(&a, "x\n").unwrap();
        assert!(verify(&a).is_ok());
        Manifest::new("extract", Some(3), "h".into()).write(&[&a]).unwrap();
        assert!(manifest_path(&a).ends_with("seqs.jsonl.manifest.json"));
        assert!(verify(&a).is_ok());
        std::fs::write(&a, "y\n").unwrap();
        assert!(matches!(verify(&a), Err(Error::ArtifactMismatch(_))));
    }
}
