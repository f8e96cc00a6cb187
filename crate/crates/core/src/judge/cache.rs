//! Response cache: an in-memory map, optionally backed by a content-addressed directory of
//! JSON files (`<root>/<key[..2]>/<key>.json`).

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn content_key(parts: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(parts).expect("json value serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug)]
pub struct ResponseCache {
    root: Option<PathBuf>,
    memory: RwLock<HashMap<String, serde_json::Value>>,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            root: None,
            memory: RwLock::new(HashMap::new()),
            write_lock: Mutex::new(()),
        }
    }

    pub fn on_disk(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(ResponseCache {
            root: Some(root),
            memory: RwLock::new(HashMap::new()),
            write_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    fn path_for(&self, key: &str) -> Option<PathBuf> {
        self.root
            .as_ref()
            .map(|r| r.join(&key[..2]).join(format!("{key}.json")))
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        if let Some(v) = self.memory.read().expect("cache lock").get(key) {
            return Ok(Some(serde_json::from_value(v.clone())?));
        }
        let Some(path) = self.path_for(key) else {
            return Ok(None);
        };
        match fs::read_to_string(&path) {
            Ok(text) => {
                let value: serde_json::Value = serde_json::from_str(&text)?;
                let out = serde_json::from_value(value.clone())?;
                self.memory
                    .write()
                    .expect("cache lock")
                    .insert(key.to_string(), value);
                Ok(Some(out))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn put<T: Serialize>(&self, key: &str, entry: &T) -> Result<()> {
        let value = serde_json::to_value(entry)?;
        let _guard = self.write_lock.lock().expect("cache write lock");
        if let Some(path) = self.path_for(key) {
            let dir = path.parent().expect("cache path has a parent");
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let tmp = path.with_extension("json.tmp");
            let text = serde_json::to_string_pretty(&value)?;
            fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
            fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        }
        self.memory
            .write()
            .expect("cache lock")
            .insert(key.to_string(), value);
        Ok(())
    }
}
