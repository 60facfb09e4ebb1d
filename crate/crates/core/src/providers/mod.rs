//! Frozen embedder sources and synthetic-data generators.

mod cache;
mod embedder;
mod generator;
mod http;
mod prompt;

pub use cache::{content_key, EmbeddingCache};
pub use embedder::{CachedEmbedder, Embedder, FileEmbedder, RemoteEmbedder};
pub use generator::{GaussianOracle, GenerationRequest, Generator, PoolReplay, RemoteGenerator};
pub use http::{JsonClient, RemoteConfig};
pub use prompt::PromptTemplate;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::calibrator::LabelSet;
use crate::error::{Error, Result};
use crate::records::{read_jsonl, EmbeddingRecord};

fn default_temperature() -> f64 {
    1.0
}

fn default_template() -> String {
    "rule_violation".into()
}

/// Where frozen embeddings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderConfig {
    /// Precomputed vectors in the record format, looked up by id or text.
    File { path: PathBuf },
    Remote {
        remote: RemoteConfig,
        dim: usize,
        #[serde(default)]
        cache_path: Option<PathBuf>,
    },
}

impl EmbedderConfig {
    pub fn build(&self) -> Result<Box<dyn Embedder>> {
        match self {
            Self::File { path } => Ok(Box::new(FileEmbedder::from_path(path)?)),
            Self::Remote { remote, dim, cache_path } => {
                let cache = match cache_path {
                    Some(p) => EmbeddingCache::open(p.clone(), remote.model.clone())?,
                    None => EmbeddingCache::in_memory(remote.model.clone()),
                };
                let inner = RemoteEmbedder::new(remote.clone(), *dim);
                Ok(Box::new(CachedEmbedder::new(inner, cache)))
            }
        }
    }
}

/// Source of synthetic samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorConfig {
    /// Class means are supplied by the task; `seed` defaults to the run seed.
    GaussianOracle {
        sigma: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    PoolReplay { path: PathBuf },
    Remote {
        remote: RemoteConfig,
        /// Built-in template name or literal template text.
        #[serde(default = "default_template")]
        template: String,
        #[serde(default = "default_temperature")]
        temperature: f64,
        embedder: EmbedderConfig,
    },
}

impl GeneratorConfig {
    pub fn template(name_or_text: &str) -> PromptTemplate {
        PromptTemplate::builtin(name_or_text)
            .unwrap_or_else(|| PromptTemplate::new("custom", name_or_text))
    }

    /// `means` is required for the Gaussian oracle and ignored otherwise.
    pub fn build(
        &self,
        labels: &LabelSet,
        means: Option<&[Vec<f64>]>,
        run_seed: u64,
    ) -> Result<Box<dyn Generator>> {
        match self {
            Self::GaussianOracle { sigma, seed } => {
                let means = means.ok_or_else(|| {
                    Error::Config("gaussian_oracle generator needs class means".into())
                })?;
                if means.len() != labels.len() {
                    return Err(Error::Config(format!(
                        "{} class means for {} labels",
                        means.len(),
                        labels.len()
                    )));
                }
                Ok(Box::new(GaussianOracle::new(
                    means.to_vec(),
                    *sigma,
                    seed.unwrap_or(run_seed),
                )?))
            }
            Self::PoolReplay { path } => {
                let records: Vec<EmbeddingRecord> = read_jsonl(path)?;
                Ok(Box::new(PoolReplay::from_records(&records, labels)?))
            }
            Self::Remote {
                remote,
                template,
                temperature,
                embedder,
            } => Ok(Box::new(RemoteGenerator::new(
                remote.clone(),
                Self::template(template),
                *temperature,
                labels.clone(),
                embedder.build()?,
            ))),
        }
    }
}
