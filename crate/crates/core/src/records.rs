//! Line-delimited JSON records shared by dataset, pool and test files.
//!
//! One object per line:
//!
//! ```json
//! {"id": 7, "class": 2, "vector": [0.1, -0.3, ...]}
//! {"class": "travel", "vector": [...], "origin": "synthetic", "round": 4}
//! ```
//!
//! `class` is either a one-based integer or a label name resolved against the
//! label set. `id`, `origin` and `round` are optional on input and always
//! written on export. A record may carry `text` instead of `vector` when an
//! embedder is available to resolve it. Blank lines are ignored.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibrator::{ClassId, LabelSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassRef {
    Id(usize),
    Name(String),
}

impl ClassRef {
    pub fn resolve(&self, labels: Option<&LabelSet>) -> Result<ClassId> {
        match self {
            ClassRef::Id(i) => Ok(ClassId(*i)),
            ClassRef::Name(name) => labels
                .and_then(|l| l.class_by_name(name))
                .ok_or_else(|| Error::UnknownClassName(name.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    pub class: ClassRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<usize>,
}

/// Label file record: `{"class": 1, "name": "...", "description": "...", "vector": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub class: usize,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f64>>,
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
