//! Content-addressed response cache: `<root>/<first 2 hex>/<digest>.json`.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::GatewayError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    /// Raw response body, verbatim.
    pub response: String,
    pub created_at: String,
}

#[derive(Debug)]
pub struct ResponseCache {
    root: PathBuf,
    tmp_counter: AtomicU64,
}

fn valid_key(key: &str) -> bool {
    key.len() == 64 && key.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            tmp_counter: AtomicU64::new(0),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.json"))
    }

    /// A missing, unreadable or mismatched entry is a miss.
    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        if !valid_key(key) {
            return None;
        }
        let bytes = std::fs::read(self.path_for(key)).ok()?;
        let entry: CacheEntry = serde_json::from_slice(&bytes).ok()?;
        (entry.key == key).then_some(entry)
    }

    /// Writes to a temporary file in the same directory, then renames.
    pub fn put(&self, entry: &CacheEntry) -> Result<(), GatewayError> {
        if !valid_key(&entry.key) {
            return Err(GatewayError::Cache(format!("invalid key {:?}", entry.key)));
        }
        let io = |e: std::io::Error| GatewayError::Cache(e.to_string());
        let path = self.path_for(&entry.key);
        let dir = path.parent().expect("entry path has a parent");
        std::fs::create_dir_all(dir).map_err(io)?;
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = dir.join(format!(".{}.{}.{n}.tmp", entry.key, std::process::id()));
        let bytes = serde_json::to_vec_pretty(entry).map_err(|e| GatewayError::Cache(e.to_string()))?;
        std::fs::write(&tmp, bytes).map_err(io)?;
        std::fs::rename(&tmp, &path).map_err(io)
    }

    pub fn len(&self) -> usize {
        let Ok(dirs) = std::fs::read_dir(&self.root) else {
            return 0;
        };
        dirs.flatten()
            .filter_map(|d| std::fs::read_dir(d.path()).ok())
            .flat_map(|it| it.flatten())
            .filter(|f| f.path().extension().is_some_and(|e| e == "json"))
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
