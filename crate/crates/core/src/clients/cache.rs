//! Content-addressed response cache, in memory with optional on-disk persistence.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::Mutex;

use serde_json::Value;

#[derive(Debug, Default)]
pub struct ResponseCache {
    mem: Mutex<HashMap<String, Value>>,
    dir: Option<PathBuf>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Cache persisted as `<dir>/<key>.json`; entries survive process restarts.
    pub fn on_disk(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            mem: Mutex::default(),
            dir: Some(dir),
        })
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        if let Some(v) = self.mem.lock().expect("cache lock").get(key) {
            return Some(v.clone());
        }
        let dir = self.dir.as_ref()?;
        let bytes = fs::read(dir.join(format!("{key}.json"))).ok()?;
        let v: Value = serde_json::from_slice(&bytes).ok()?;
        self.mem
            .lock()
            .expect("cache lock")
            .insert(key.to_string(), v.clone());
        Some(v)
    }

    pub fn put(&self, key: &str, value: &Value) {
        self.mem
            .lock()
            .expect("cache lock")
            .insert(key.to_string(), value.clone());
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{key}.json"));
            let tmp = dir.join(format!(
                "{key}.{}.{:?}.tmp",
                std::process::id(),
                std::thread::current().id()
            ));
            let ok = serde_json::to_vec(value)
                .ok()
                .and_then(|bytes| fs::write(&tmp, bytes).ok())
                .and_then(|_| fs::rename(&tmp, &path).ok());
            if ok.is_none() {
                tracing::warn!(key, "failed to persist cache entry");
                let _ = fs::remove_file(&tmp);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.mem.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
