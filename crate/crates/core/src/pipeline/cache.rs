use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GplError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PRODUCER_FILE: &str = "_producer.json";
pub const LOCK_FILE: &str = ".lock";

/// One completed stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEntry {
    pub input_hash: String,
    pub config_hash: String,
    /// Output files relative to the stage directory.
    pub outputs: Vec<String>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// Per-dataset record of completed stages, keyed by stage directory relative
/// to the dataset root (`common/generate`, `gpl/train`, ...).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub stages: BTreeMap<String, StageEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Miss,
}

impl CacheManifest {
    /// Read `<root>/manifest.json`. A missing file gives an empty manifest;
    /// an unreadable one is discarded with a warning.
    pub fn load(root: &Path) -> Self {
        let path = root.join(MANIFEST_FILE);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Self::default(),
            Err(e) => {
                log::warn!("cannot read {}: {e}; rebuilding cache manifest", path.display());
                return Self::default();
            }
        };
        match serde_json::from_str(&text) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("corrupt cache manifest {}: {e}; rebuilding from scratch", path.display());
                Self::default()
            }
        }
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST_FILE);
        let tmp = root.join(format!("{MANIFEST_FILE}.tmp"));
        let text = serde_json::to_string_pretty(self).map_err(|e| GplError::Serde(e.to_string()))?;
        std::fs::write(&tmp, text + "\n").map_err(|e| GplError::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| GplError::io(path, e))
    }

    /// Hit iff a completed entry exists with both hashes equal and every
    /// recorded output still on disk.
    pub fn resolve(&self, root: &Path, key: &str, input_hash: &str, config_hash: &str) -> CacheStatus {
        let Some(e) = self.stages.get(key) else {
            return CacheStatus::Miss;
        };
        let dir = root.join(key);
        if e.input_hash == input_hash
            && e.config_hash == config_hash
            && e.outputs.iter().all(|o| dir.join(o).is_file())
        {
            CacheStatus::Hit
        } else {
            CacheStatus::Miss
        }
    }

    pub fn record(&mut self, key: &str, input_hash: String, config_hash: String, outputs: Vec<String>) {
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        self.stages.insert(
            key.to_string(),
            StageEntry {
                input_hash,
                config_hash,
                outputs,
                timestamp,
            },
        );
    }
}

/// Sidecar written into every stage directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Producer {
    pub stage: String,
    pub config_hash: String,
    pub input_hash: String,
    pub outputs: Vec<String>,
    pub version: String,
}

impl Producer {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(PRODUCER_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| GplError::Serde(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| GplError::io(path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(PRODUCER_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| GplError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| GplError::parse(path, 1, e.to_string()))
    }
}

/// SHA-256 over the canonical JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(value).map_err(|e| GplError::Serde(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(&json)))
}

/// SHA-256 over labelled file contents. Labels keep the hash independent of
/// where the output directory lives.
pub fn input_hash(files: &[(&str, &Path)]) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    for (label, path) in files {
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
        let file = File::open(path).map_err(|e| GplError::io(*path, e))?;
        let len = file.metadata().map_err(|e| GplError::io(*path, e))?.len();
        hasher.update(len.to_le_bytes());
        let mut r = BufReader::new(file);
        loop {
            let n = r.read(&mut buf).map_err(|e| GplError::io(*path, e))?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
        }
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Exclusive lock on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| GplError::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(GplError::Locked(dir.to_path_buf())),
            Err(e) => Err(GplError::io(path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolve_needs_both_hashes_and_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let stage = dir.path().join("common/generate");
        std::fs::create_dir_all(&stage).unwrap();
        std::fs::write(stage.join("out.txt"), "x").unwrap();
        let mut m = CacheManifest::default();
        m.record("common/generate", "in".into(), "cfg".into(), vec!["out.txt".into()]);
        assert_eq!(m.resolve(dir.path(), "common/generate", "in", "cfg"), CacheStatus::Hit);
        assert_eq!(m.resolve(dir.path(), "common/generate", "in2", "cfg"), CacheStatus::Miss);
        assert_eq!(m.resolve(dir.path(), "common/generate", "in", "cfg2"), CacheStatus::Miss);
        assert_eq!(m.resolve(dir.path(), "common/mine", "in", "cfg"), CacheStatus::Miss);
        std::fs::remove_file(stage.join("out.txt")).unwrap();
        assert_eq!(m.resolve(dir.path(), "common/generate", "in", "cfg"), CacheStatus::Miss);
    }

    #[test]
    fn corrupt_manifest_is_rebuilt() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(MANIFEST_FILE), "{not json").unwrap();
        assert_eq!(CacheManifest::load(dir.path()), CacheManifest::default());
        let mut m = CacheManifest::default();
        m.record("a", "i".into(), "c".into(), vec![]);
        m.save(dir.path()).unwrap();
        assert_eq!(CacheManifest::load(dir.path()), m);
    }

    #[test]
    fn hashes_track_content_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        std::fs::write(&a, "hello").unwrap();
        let h1 = input_hash(&[("corpus", &a)]).unwrap();
        assert_eq!(h1, input_hash(&[("corpus", &a)]).unwrap());
        assert_ne!(h1, input_hash(&[("queries", &a)]).unwrap());
        std::fs::write(&a, "hello!").unwrap();
        assert_ne!(h1, input_hash(&[("corpus", &a)]).unwrap());
        assert!(input_hash(&[("x", &dir.path().join("missing"))]).is_err());
        assert_ne!(config_hash(&1.0f64).unwrap(), config_hash(&1.5f64).unwrap());
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(dir.path()).unwrap();
        assert!(matches!(DirLock::acquire(dir.path()), Err(GplError::Locked(_))));
        drop(lock);
        assert!(DirLock::acquire(dir.path()).is_ok());
    }
}
