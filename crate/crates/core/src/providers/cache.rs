//! Append-only embedding cache.
//!
//! One JSON object per line: `{"key": <hex sha256>, "model": <name>, "vector": [...]}`
//! where the key hashes the model name and the exact input text. Files are
//! portable across machines; later lines for the same key win.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    key: String,
    model: String,
    vector: Vec<f64>,
}

pub fn content_key(model: &str, text: &str) -> String {
    let mut h = Sha256::new();
    h.update(model.as_bytes());
    h.update([0u8]);
    h.update(text.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug)]
pub struct EmbeddingCache {
    path: Option<PathBuf>,
    model: String,
    entries: HashMap<String, Vec<f64>>,
}

impl EmbeddingCache {
    pub fn in_memory(model: impl Into<String>) -> Self {
        Self {
            path: None,
            model: model.into(),
            entries: HashMap::new(),
        }
    }

    /// Opens (or creates on first write) the cache file at `path`.
    pub fn open(path: impl Into<PathBuf>, model: impl Into<String>) -> Result<Self> {
        let path = path.into();
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(&path)?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheLine = serde_json::from_str(&line).map_err(|e| Error::CacheCorrupt {
                    path: path.clone(),
                    line: i + 1,
                    reason: e.to_string(),
                })?;
                if rec.key.len() != 64 || !rec.key.bytes().all(|b| b.is_ascii_hexdigit()) {
                    return Err(Error::CacheCorrupt {
                        path: path.clone(),
                        line: i + 1,
                        reason: format!("malformed key {:?}", rec.key),
                    });
                }
                entries.insert(rec.key, rec.vector);
            }
        }
        Ok(Self {
            path: Some(path),
            model: model.into(),
            entries,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, text: &str) -> Option<&Vec<f64>> {
        self.entries.get(&content_key(&self.model, text))
    }

    pub fn insert(&mut self, text: &str, vector: Vec<f64>) -> Result<()> {
        let key = content_key(&self.model, text);
        if let Some(path) = &self.path {
            let mut file = OpenOptions::new().create(true).append(true).open(path)?;
            let line = CacheLine {
                key: key.clone(),
                model: self.model.clone(),
                vector: vector.clone(),
            };
            let mut buf = serde_json::to_vec(&line)?;
            buf.push(b'\n');
            file.write_all(&buf)?;
        }
        self.entries.insert(key, vector);
        Ok(())
    }
}
