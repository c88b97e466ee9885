use std::fs;
use std::path::{Path, PathBuf};

use dashmap::DashMap;
use serde_json::Value;

/// Response cache keyed by request hash: an in-memory map, optionally backed by
/// one JSON file per entry under a directory.
#[derive(Debug, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    mem: DashMap<String, Value>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ResponseCache {
            dir: Some(dir),
            mem: DashMap::new(),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn file(&self, key: &str) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(&key[..2.min(key.len())]).join(format!("{key}.json")))
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        if let Some(v) = self.mem.get(key) {
            return Some(v.clone());
        }
        let path = self.file(key)?;
        let bytes = fs::read(path).ok()?;
        let v: Value = serde_json::from_slice(&bytes).ok()?;
        self.mem.insert(key.to_string(), v.clone());
        Some(v)
    }

    pub fn put(&self, key: &str, value: &Value) {
        self.mem.insert(key.to_string(), value.clone());
        if let Some(path) = self.file(key) {
            // Disk write failures only cost a future cache miss.
            let tmp = path.with_extension("json.tmp");
            let res = path
                .parent()
                .map_or(Ok(()), fs::create_dir_all)
                .and_then(|_| fs::write(&tmp, value.to_string()))
                .and_then(|_| fs::rename(&tmp, &path));
            if let Err(e) = res {
                log::warn!("cache write {} failed: {e}", path.display());
            }
        }
    }

    pub fn len(&self) -> usize {
        self.mem.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mem.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn disk_entries_survive_a_new_instance() {
        let dir = tempfile::tempdir().unwrap();
        let c = ResponseCache::on_disk(dir.path()).unwrap();
        c.put("abcdef", &json!({"reply": "x"}));
        let c2 = ResponseCache::on_disk(dir.path()).unwrap();
        assert_eq!(c2.get("abcdef"), Some(json!({"reply": "x"})));
        assert_eq!(c2.get("zz"), None);
    }
}
