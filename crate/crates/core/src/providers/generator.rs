use std::collections::{BTreeMap, HashSet, VecDeque};

use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};

use super::embedder::Embedder;
use super::http::{JsonClient, RemoteConfig};
use super::prompt::PromptTemplate;
use crate::calibrator::{ClassId, LabelSet};
use crate::error::{check_dim, Error, Result};
use crate::records::EmbeddingRecord;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerationRequest {
    pub class: ClassId,
    pub count: usize,
    pub round: usize,
}

/// Produces embedded synthetic samples for a requested class.
pub trait Generator: Send {
    fn generate(&mut self, request: GenerationRequest) -> Result<Vec<Vec<f64>>>;

    /// Total samples produced so far.
    fn produced(&self) -> usize;

    /// Advances internal state as if `count` samples of `class` had been
    /// generated, so a resumed run continues the same streams.
    fn fast_forward(&mut self, class: ClassId, count: usize) -> Result<()> {
        let _ = (class, count);
        Ok(())
    }
}

/// Class-conditional Gaussian `μ_C + σ z`, `z ~ N(0, I)`.
///
/// The `j`-th request for class `C` draws from its own seeded stream, so the
/// same class receives the same synthetic batches regardless of how requests
/// for other classes are interleaved.
#[derive(Debug, Clone)]
pub struct GaussianOracle {
    means: Vec<Vec<f64>>,
    sigma: f64,
    seed: u64,
    requests_per_class: Vec<u64>,
    produced: usize,
}

impl GaussianOracle {
    pub fn new(means: Vec<Vec<f64>>, sigma: f64, seed: u64) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::Config("gaussian oracle needs at least one class mean".into()));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        let d = means[0].len();
        for m in &means {
            check_dim(d, m.len())?;
        }
        let k = means.len();
        Ok(Self {
            means,
            sigma,
            seed,
            requests_per_class: vec![0; k],
            produced: 0,
        })
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Draws `count` samples of `class` from an explicit RNG, without touching
    /// the internal request streams.
    pub fn draw<R: rand::Rng + ?Sized>(&self, class: ClassId, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let mu = &self.means[class.index()];
        (0..count)
            .map(|_| {
                mu.iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + self.sigma * z
                    })
                    .collect()
            })
            .collect()
    }
}

impl Generator for GaussianOracle {
    fn generate(&mut self, request: GenerationRequest) -> Result<Vec<Vec<f64>>> {
        let k = self.means.len();
        if request.class.0 == 0 || request.class.0 > k {
            return Err(Error::InvalidClass {
                class: request.class.0,
                num_classes: k,
            });
        }
        let c = request.class.index();
        let j = self.requests_per_class[c];
        self.requests_per_class[c] += 1;
        let mut rng = seeds::stream(self.seed, "gaussian-oracle", &[c as u64, j]);
        self.produced += request.count;
        Ok(self.draw(request.class, request.count, &mut rng))
    }

    fn produced(&self) -> usize {
        self.produced
    }

    fn fast_forward(&mut self, class: ClassId, count: usize) -> Result<()> {
        let c = class
            .0
            .checked_sub(1)
            .filter(|&c| c < self.means.len())
            .ok_or(Error::InvalidClass {
                class: class.0,
                num_classes: self.means.len(),
            })?;
        self.requests_per_class[c] += 1;
        self.produced += count;
        Ok(())
    }
}

/// Replays held-out labeled records, each at most once.
#[derive(Debug, Clone)]
pub struct PoolReplay {
    queues: Vec<VecDeque<(Option<u64>, Vec<f64>)>>,
    emitted: HashSet<u64>,
    produced: usize,
}

impl PoolReplay {
    pub fn from_records(records: &[EmbeddingRecord], labels: &LabelSet) -> Result<Self> {
        let mut queues = vec![VecDeque::new(); labels.len()];
        let mut seen = HashSet::new();
        for r in records {
            let class = r.class.resolve(Some(labels))?;
            labels.check_class(class)?;
            let v = r
                .vector
                .clone()
                .ok_or_else(|| Error::Config("pool records need vectors".into()))?;
            check_dim(labels.dim(), v.len())?;
            if let Some(id) = r.id {
                if !seen.insert(id) {
                    return Err(Error::Config(format!("duplicate pool id {id}")));
                }
            }
            queues[class.index()].push_back((r.id, v));
        }
        Ok(Self {
            queues,
            emitted: HashSet::new(),
            produced: 0,
        })
    }

    pub fn remaining(&self, class: ClassId) -> usize {
        self.queues[class.index()].len()
    }

    pub fn emitted_ids(&self) -> &HashSet<u64> {
        &self.emitted
    }
}

impl Generator for PoolReplay {
    fn generate(&mut self, request: GenerationRequest) -> Result<Vec<Vec<f64>>> {
        let k = self.queues.len();
        if request.class.0 == 0 || request.class.0 > k {
            return Err(Error::InvalidClass {
                class: request.class.0,
                num_classes: k,
            });
        }
        let queue = &mut self.queues[request.class.index()];
        if queue.len() < request.count {
            return Err(Error::PoolExhausted {
                class: request.class.0,
                requested: request.count,
                available: queue.len(),
            });
        }
        let mut out = Vec::with_capacity(request.count);
        for (id, v) in queue.drain(..request.count) {
            if let Some(id) = id {
                self.emitted.insert(id);
            }
            out.push(v);
        }
        self.produced += out.len();
        Ok(out)
    }

    fn produced(&self) -> usize {
        self.produced
    }

    fn fast_forward(&mut self, class: ClassId, count: usize) -> Result<()> {
        self.generate(GenerationRequest { class, count, round: 0 }).map(|_| ())
    }
}

/// Chat-completion generator whose text outputs are embedded before use.
///
/// Request: `{"model", "temperature", "messages": [{"role": "user", "content": <prompt>}]}`.
/// Response: `{"choices": [{"message": {"content": <text>}}]}`, one generated
/// item per non-empty line.
pub struct RemoteGenerator {
    client: JsonClient,
    template: PromptTemplate,
    temperature: f64,
    labels: LabelSet,
    embedder: Box<dyn Embedder>,
    existing: Vec<Vec<String>>,
    max_examples: usize,
    produced: usize,
}

impl RemoteGenerator {
    pub fn new(
        config: RemoteConfig,
        template: PromptTemplate,
        temperature: f64,
        labels: LabelSet,
        embedder: Box<dyn Embedder>,
    ) -> Self {
        let k = labels.len();
        Self {
            client: JsonClient::new(config),
            template,
            temperature,
            labels,
            embedder,
            existing: vec![Vec::new(); k],
            max_examples: 50,
            produced: 0,
        }
    }

    /// Seeds the per-class example lists shown to the model.
    pub fn with_existing(mut self, class: ClassId, texts: Vec<String>) -> Self {
        self.existing[class.index()].extend(texts);
        self
    }

    pub fn render_prompt(&self, class: ClassId, count: usize) -> Result<String> {
        let label = self.labels.get(class).ok_or(Error::InvalidClass {
            class: class.0,
            num_classes: self.labels.len(),
        })?;
        let examples = &self.existing[class.index()];
        let shown = &examples[examples.len().saturating_sub(self.max_examples)..];
        let mut values = BTreeMap::new();
        values.insert("label", label.name.clone());
        values.insert("description", label.description.clone());
        values.insert("num_generate", count.to_string());
        values.insert("existing_queries", shown.join("\n"));
        self.template.render(&values)
    }

    fn parse(resp: &Value) -> Result<Vec<String>> {
        let content = resp
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Remote("response has no choices[0].message.content".into()))?;
        Ok(content
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect())
    }
}

impl Generator for RemoteGenerator {
    fn generate(&mut self, request: GenerationRequest) -> Result<Vec<Vec<f64>>> {
        let prompt = self.render_prompt(request.class, request.count)?;
        let body = json!({
            "model": self.client.config().model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut items = Self::parse(&self.client.post(&body)?)?;
        if items.len() < request.count {
            return Err(Error::Remote(format!(
                "generator returned {} items, {} requested",
                items.len(),
                request.count
            )));
        }
        items.truncate(request.count);
        let vectors = self.embedder.embed_batch(&items)?;
        self.existing[request.class.index()].extend(items);
        self.produced += vectors.len();
        Ok(vectors)
    }

    fn produced(&self) -> usize {
        self.produced
    }
}
