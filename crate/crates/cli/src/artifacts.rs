//! Artifact writing with `<file>.meta.json` sidecars.

use std::path::{Path, PathBuf};

use anyhow::Context as _;
use chrono::{DateTime, Utc};
use rdbe_core::corpus::SplitRatios;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Category;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub artifact: String,
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub ratios: SplitRatios,
    /// sha256 of the artifact content, timestamps excluded.
    pub content_sha256: String,
    pub started_at: DateTime<Utc>,
    pub written_at: DateTime<Utc>,
}

/// Per-command context stamped into every sidecar.
#[derive(Debug, Clone)]
pub struct Stamp {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub ratios: SplitRatios,
    pub started_at: DateTime<Utc>,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Stamp {
    /// Write `bytes` atomically and its sidecar. `hashed` overrides the bytes
    /// the content hash is computed over.
    pub fn write(&self, path: &Path, bytes: &[u8], hashed: Option<&[u8]>) -> anyhow::Result<()> {
        rdbe_core::jsonl::write_atomic(path, bytes).context(Category::Io)?;
        self.write_meta(path, hashed.unwrap_or(bytes))
    }

    pub fn write_meta(&self, path: &Path, hashed: &[u8]) -> anyhow::Result<()> {
        let meta = ArtifactMeta {
            artifact: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            command: self.command.clone(),
            config_hash: self.config_hash.clone(),
            code_version: CODE_VERSION.to_string(),
            seed: self.seed,
            ratios: self.ratios,
            content_sha256: sha256_hex(hashed),
            started_at: self.started_at,
            written_at: Utc::now(),
        };
        let json = serde_json::to_vec_pretty(&meta)?;
        rdbe_core::jsonl::write_atomic(&meta_path(path), &json).context(Category::Io)
    }

    pub fn write_jsonl<'a, T, I>(&self, path: &Path, records: I) -> anyhow::Result<()>
    where
        T: Serialize + 'a,
        I: IntoIterator<Item = &'a T>,
    {
        let bytes = rdbe_core::jsonl::to_bytes(records)?;
        self.write(path, &bytes, None)
    }

    pub fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> anyhow::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(path, &bytes, None)
    }
}

pub fn read_meta(path: &Path) -> anyhow::Result<ArtifactMeta> {
    let p = meta_path(path);
    let bytes = std::fs::read(&p).with_context(|| format!("cannot read {}", p.display()))?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_records_hash_and_stamp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        let stamp = Stamp {
            command: "ingest".into(),
            config_hash: "abc".into(),
            seed: 22,
            ratios: SplitRatios::default(),
            started_at: Utc::now(),
        };
        stamp.write(&path, b"hello\n", None).unwrap();
        let meta = read_meta(&path).unwrap();
        assert_eq!(meta_path(&path), dir.path().join("a.jsonl.meta.json"));
        assert_eq!(meta.content_sha256, sha256_hex(b"hello\n"));
        assert_eq!(meta.seed, 22);
        assert_eq!(meta.code_version, CODE_VERSION);
        assert_eq!(std::fs::read(&path).unwrap(), b"hello\n");
    }
}
