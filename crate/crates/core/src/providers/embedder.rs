use std::collections::HashMap;
use std::path::Path;

use serde_json::{json, Value};

use super::cache::EmbeddingCache;
use super::http::{JsonClient, RemoteConfig};
use crate::error::{check_dim, Error, Result};
use crate::records::{read_jsonl, EmbeddingRecord};

/// Source of frozen embeddings.
pub trait Embedder: Send {
    fn dim(&self) -> usize;

    fn embed(&mut self, item: &str) -> Result<Vec<f64>> {
        Ok(self.embed_batch(&[item.to_string()])?.remove(0))
    }

    /// Embeddings in input order.
    fn embed_batch(&mut self, items: &[String]) -> Result<Vec<Vec<f64>>>;
}

fn check_items(items: &[String]) -> Result<()> {
    if items.iter().any(|s| s.is_empty()) {
        return Err(Error::Precondition("cannot embed an empty item".into()));
    }
    Ok(())
}

/// Precomputed vectors looked up by record id or text.
#[derive(Debug, Clone)]
pub struct FileEmbedder {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl FileEmbedder {
    pub fn new(dim: usize, vectors: HashMap<String, Vec<f64>>) -> Result<Self> {
        for v in vectors.values() {
            check_dim(dim, v.len())?;
        }
        Ok(Self { dim, vectors })
    }

    /// Indexes every record that has a vector under its id and, when present, its text.
    pub fn from_records(records: &[EmbeddingRecord]) -> Result<Self> {
        let mut vectors = HashMap::new();
        let mut dim = None;
        for r in records {
            let Some(v) = &r.vector else { continue };
            let d = *dim.get_or_insert(v.len());
            check_dim(d, v.len())?;
            if let Some(id) = r.id {
                vectors.insert(id.to_string(), v.clone());
            }
            if let Some(text) = &r.text {
                vectors.insert(text.clone(), v.clone());
            }
        }
        let dim = dim.ok_or_else(|| Error::Config("embedding file contains no vectors".into()))?;
        Ok(Self { dim, vectors })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_records(&read_jsonl(path)?)
    }
}

impl Embedder for FileEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&mut self, items: &[String]) -> Result<Vec<Vec<f64>>> {
        check_items(items)?;
        items
            .iter()
            .map(|k| {
                self.vectors
                    .get(k)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("no stored embedding for {k:?}")))
            })
            .collect()
    }
}

/// OpenAI-style embeddings endpoint.
///
/// Request: `{"model": <model>, "input": [<text>, ...]}`.
/// Response: `{"data": [{"index": i, "embedding": [...]}, ...]}`; entries are
/// reordered by `index` when present.
#[derive(Debug)]
pub struct RemoteEmbedder {
    client: JsonClient,
    dim: usize,
    batch_size: usize,
    requests: usize,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteConfig, dim: usize) -> Self {
        Self {
            client: JsonClient::new(config),
            dim,
            batch_size: 64,
            requests: 0,
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn model(&self) -> &str {
        &self.client.config().model
    }

    /// Number of HTTP requests issued so far.
    pub fn requests(&self) -> usize {
        self.requests
    }

    fn parse(&self, resp: &Value, expected: usize) -> Result<Vec<Vec<f64>>> {
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Remote("response has no `data` array".into()))?;
        if data.len() != expected {
            return Err(Error::Remote(format!("expected {expected} embeddings, got {}", data.len())));
        }
        let mut out: Vec<(usize, Vec<f64>)> = Vec::with_capacity(expected);
        for (pos, item) in data.iter().enumerate() {
            let index = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
            let v: Vec<f64> = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Remote("entry has no `embedding`".into()))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| Error::Remote("non-numeric embedding value".into())))
                .collect::<Result<_>>()?;
            check_dim(self.dim, v.len()).map_err(|e| Error::Remote(e.to_string()))?;
            out.push((index, v));
        }
        out.sort_by_key(|(i, _)| *i);
        Ok(out.into_iter().map(|(_, v)| v).collect())
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&mut self, items: &[String]) -> Result<Vec<Vec<f64>>> {
        check_items(items)?;
        let chunks: Vec<&[String]> = items.chunks(self.batch_size).collect();
        let in_flight = self.client.config().max_in_flight.max(1);
        let mut out = Vec::with_capacity(items.len());
        for wave in chunks.chunks(in_flight) {
            let results: Vec<Result<Value>> = std::thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|chunk| {
                        let client = &self.client;
                        let body = json!({ "model": client.config().model, "input": chunk });
                        s.spawn(move || client.post(&body))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(Error::Remote("request thread panicked".into()))))
                    .collect()
            });
            self.requests += wave.len();
            for (chunk, resp) in wave.iter().zip(results) {
                out.extend(self.parse(&resp?, chunk.len())?);
            }
        }
        Ok(out)
    }
}

/// Content-addressed cache in front of another embedder. Identical inputs
/// always resolve to the cached vector, so reruns need no remote calls.
pub struct CachedEmbedder<E> {
    inner: E,
    cache: EmbeddingCache,
    misses: usize,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E, cache: EmbeddingCache) -> Self {
        Self {
            inner,
            cache,
            misses: 0,
        }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn misses(&self) -> usize {
        self.misses
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed_batch(&mut self, items: &[String]) -> Result<Vec<Vec<f64>>> {
        check_items(items)?;
        let mut missing: Vec<String> = Vec::new();
        for it in items {
            if self.cache.get(it).is_none() && !missing.contains(it) {
                missing.push(it.clone());
            }
        }
        if !missing.is_empty() {
            let fresh = self.inner.embed_batch(&missing)?;
            self.misses += missing.len();
            for (text, v) in missing.iter().zip(fresh) {
                check_dim(self.inner.dim(), v.len())?;
                self.cache.insert(text, v)?;
            }
        }
        Ok(items
            .iter()
            .map(|it| self.cache.get(it).cloned().expect("cached above"))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::ClassRef;

    struct Counting {
        calls: usize,
    }

    impl Embedder for Counting {
        fn dim(&self) -> usize {
            2
        }

        fn embed_batch(&mut self, items: &[String]) -> Result<Vec<Vec<f64>>> {
            self.calls += 1;
            Ok(items.iter().map(|s| vec![s.len() as f64, self.calls as f64]).collect())
        }
    }

    #[test]
    fn file_lookup_is_verbatim() {
        let rec = EmbeddingRecord {
            id: Some(42),
            class: ClassRef::Id(1),
            vector: Some(vec![0.1, 0.7]),
            text: Some("a query".into()),
            origin: None,
            round: None,
        };
        let mut e = FileEmbedder::from_records(&[rec]).unwrap();
        assert_eq!(e.embed("42").unwrap(), vec![0.1, 0.7]);
        assert_eq!(e.embed("a query").unwrap(), vec![0.1, 0.7]);
        assert!(e.embed("nope").is_err());
        assert!(e.embed("").is_err());
    }

    #[test]
    fn cache_hits_skip_inner() {
        let mut e = CachedEmbedder::new(Counting { calls: 0 }, EmbeddingCache::in_memory("m"));
        let a = e.embed("same text").unwrap();
        let b = e.embed("same text").unwrap();
        assert_eq!(a, b);
        assert_eq!(e.inner().calls, 1);
        let batch = e.embed_batch(&["x".into(), "same text".into(), "x".into()]).unwrap();
        assert_eq!(e.inner().calls, 2);
        assert_eq!(batch[0], batch[2]);
        assert_eq!(batch[1], a);
        assert_eq!(e.misses(), 2);
    }
}
