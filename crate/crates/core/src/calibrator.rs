//! Residual query/label calibrators, the softmax matching score and the
//! cross-entropy loss with exact parameter gradients.
//!
//! A query embedding `e(q)` and a label embedding `e(p)` are calibrated as
//! `e(q) + Q(e(q); ψ)` and `e(p) + P(e(p); φ)`. The score for class `C` is the
//! softmax over classes of the inner products between the calibrated query and
//! each calibrated label; the per-sample loss is `−log s(q, p_y)`.
//!
//! The flattened parameter vector is `w = [ψ, φ]`: the query network's
//! parameters first, then the label network's, each in the layer-major layout
//! documented on [`MlpNetwork`].

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::nn::checkpoint;
use crate::nn::{MlpNetwork, Tape};

/// Lower clamp applied to a probability before taking its logarithm.
pub const PROB_FLOOR: f64 = 1e-300;

/// One-based class identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub usize);

impl ClassId {
    /// Zero-based position of the class.
    pub fn index(self) -> usize {
        self.0 - 1
    }

    pub fn from_index(index: usize) -> Self {
        ClassId(index + 1)
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Label {
    pub class: ClassId,
    pub name: String,
    pub description: String,
    pub embedding: Vec<f64>,
}

/// Classes `1..=K` with their frozen label embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    labels: Vec<Label>,
    dim: usize,
}

impl LabelSet {
    /// Labels may arrive in any order; class ids must be exactly `1..=K`.
    pub fn new(mut labels: Vec<Label>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Config("label set is empty".into()));
        }
        labels.sort_by_key(|l| l.class);
        for (i, l) in labels.iter().enumerate() {
            if l.class != ClassId::from_index(i) {
                return Err(Error::Config(format!(
                    "label class ids must be 1..={} without gaps; found {} at position {}",
                    labels.len(),
                    l.class,
                    i + 1
                )));
            }
        }
        let dim = labels[0].embedding.len();
        for l in &labels {
            check_dim(dim, l.embedding.len())?;
        }
        Ok(Self { labels, dim })
    }

    /// Anonymous labels `1..=K` from bare embeddings.
    pub fn from_embeddings(embeddings: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            embeddings
                .into_iter()
                .enumerate()
                .map(|(i, embedding)| Label {
                    class: ClassId::from_index(i),
                    name: format!("class-{}", i + 1),
                    description: String::new(),
                    embedding,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn iter(&self) -> impl Iterator<Item = &Label> {
        self.labels.iter()
    }

    pub fn get(&self, class: ClassId) -> Option<&Label> {
        class.0.checked_sub(1).and_then(|i| self.labels.get(i))
    }

    pub fn class_by_name(&self, name: &str) -> Option<ClassId> {
        self.labels.iter().find(|l| l.name == name).map(|l| l.class)
    }

    pub fn check_class(&self, class: ClassId) -> Result<()> {
        if class.0 >= 1 && class.0 <= self.len() {
            Ok(())
        } else {
            Err(Error::InvalidClass {
                class: class.0,
                num_classes: self.len(),
            })
        }
    }
}

/// Softmax scores over the classes and the winning class.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPrediction {
    pub scores: Vec<f64>,
    pub predicted: ClassId,
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Calibrated label embeddings for the current label-network parameters,
/// together with the tapes needed to backpropagate into `φ`.
#[derive(Debug, Clone)]
pub struct LabelCache {
    embeddings: Vec<Vec<f64>>,
    tapes: Vec<Tape>,
}

impl LabelCache {
    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn num_classes(&self) -> usize {
        self.embeddings.len()
    }
}

/// Summed gradient and loss over a group of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSum {
    pub grad: Vec<f64>,
    pub loss: f64,
    pub count: usize,
}

impl GradientSum {
    pub fn mean_grad(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.grad.iter().map(|g| g / n).collect()
    }

    pub fn mean_loss(&self) -> f64 {
        self.loss / self.count.max(1) as f64
    }
}

/// The trainable pair `w = {ψ, φ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratorPair {
    query: MlpNetwork,
    label: MlpNetwork,
}

/// Default hidden width for embedding dimension `d`: `d / 4`, at least one unit.
pub fn default_hidden_width(embed_dim: usize) -> usize {
    (embed_dim / 4).max(1)
}

impl CalibratorPair {
    /// Freshly initialized pair; both residual branches start at exactly zero.
    pub fn new<R: Rng + ?Sized>(embed_dim: usize, rng: &mut R) -> Self {
        Self::with_hidden(embed_dim, default_hidden_width(embed_dim), rng)
    }

    pub fn with_hidden<R: Rng + ?Sized>(embed_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let query = MlpNetwork::calibrator(embed_dim, hidden, rng);
        let label = MlpNetwork::calibrator(embed_dim, hidden, rng);
        Self { query, label }
    }

    pub fn from_networks(query: MlpNetwork, label: MlpNetwork) -> Result<Self> {
        let d = query.input_dim();
        for net in [&query, &label] {
            check_dim(d, net.input_dim())?;
            check_dim(d, net.output_dim())?;
        }
        Ok(Self { query, label })
    }

    pub fn embed_dim(&self) -> usize {
        self.query.input_dim()
    }

    pub fn query_net(&self) -> &MlpNetwork {
        &self.query
    }

    pub fn label_net(&self) -> &MlpNetwork {
        &self.label
    }

    pub fn num_params(&self) -> usize {
        self.query.num_params() + self.label.num_params()
    }

    /// Number of leading entries of the flat vector that belong to `ψ`.
    pub fn query_param_count(&self) -> usize {
        self.query.num_params()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.query.write_params(&mut out);
        self.label.write_params(&mut out);
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim(self.num_params(), params.len())?;
        let (psi, phi) = params.split_at(self.query.num_params());
        self.query.set_params(psi)?;
        self.label.set_params(phi)
    }

    pub fn calibrate_query(&self, e_q: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.query.eval(e_q)?;
        out.iter_mut().zip(e_q).for_each(|(o, e)| *o += e);
        Ok(out)
    }

    pub fn calibrate_label(&self, e_p: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.label.eval(e_p)?;
        out.iter_mut().zip(e_p).for_each(|(o, e)| *o += e);
        Ok(out)
    }

    pub fn label_cache(&self, labels: &LabelSet) -> Result<LabelCache> {
        check_dim(self.embed_dim(), labels.dim())?;
        let mut embeddings = Vec::with_capacity(labels.len());
        let mut tapes = Vec::with_capacity(labels.len());
        for l in labels.iter() {
            let (mut y, tape) = self.label.forward(&l.embedding)?;
            y.iter_mut().zip(&l.embedding).for_each(|(o, e)| *o += e);
            embeddings.push(y);
            tapes.push(tape);
        }
        Ok(LabelCache { embeddings, tapes })
    }

    pub fn logits_with(&self, cache: &LabelCache, e_q: &[f64]) -> Result<Vec<f64>> {
        let q = self.calibrate_query(e_q)?;
        Ok(cache.embeddings.iter().map(|p| dot(&q, p)).collect())
    }

    pub fn score_with(&self, cache: &LabelCache, e_q: &[f64]) -> Result<ScoredPrediction> {
        if cache.num_classes() < 2 {
            return Err(Error::Precondition("scoring needs at least two classes".into()));
        }
        let scores = softmax(&self.logits_with(cache, e_q)?);
        let predicted = ClassId::from_index(argmax(&scores));
        Ok(ScoredPrediction { scores, predicted })
    }

    pub fn score(&self, e_q: &[f64], labels: &LabelSet) -> Result<ScoredPrediction> {
        self.score_with(&self.label_cache(labels)?, e_q)
    }

    pub fn predict(&self, e_q: &[f64], labels: &LabelSet) -> Result<ClassId> {
        Ok(self.score(e_q, labels)?.predicted)
    }

    pub fn loss(&self, e_q: &[f64], y: ClassId, labels: &LabelSet) -> Result<f64> {
        labels.check_class(y)?;
        let s = self.score(e_q, labels)?;
        Ok(-s.scores[y.index()].max(PROB_FLOOR).ln())
    }

    /// Exact gradient of the loss for one sample over the flattened `w = [ψ, φ]`.
    pub fn sample_gradient(&self, e_q: &[f64], y: ClassId, labels: &LabelSet) -> Result<Vec<f64>> {
        labels.check_class(y)?;
        let cache = self.label_cache(labels)?;
        Ok(self.accumulate(&cache, std::iter::once((e_q, y)))?.grad)
    }

    /// Sums loss and gradient over `samples` against a fixed label cache.
    ///
    /// Query-side gradients are backpropagated per sample. The label-side
    /// upstream gradients are summed per class first and pushed through the
    /// label network once per class, which is exact because backpropagation is
    /// linear in the upstream gradient for a fixed tape.
    pub fn accumulate<'a, I>(&self, cache: &LabelCache, samples: I) -> Result<GradientSum>
    where
        I: IntoIterator<Item = (&'a [f64], ClassId)>,
    {
        let d = self.embed_dim();
        let k = cache.num_classes();
        let n_psi = self.query.num_params();
        let mut grad = vec![0.0; self.num_params()];
        let mut label_upstream = vec![vec![0.0; d]; k];
        let mut loss = 0.0;
        let mut count = 0;
        for (e_q, y) in samples {
            if y.0 == 0 || y.0 > k {
                return Err(Error::InvalidClass {
                    class: y.0,
                    num_classes: k,
                });
            }
            let (mut q, tape) = self.query.forward(e_q)?;
            q.iter_mut().zip(e_q).for_each(|(o, e)| *o += e);
            let logits: Vec<f64> = cache.embeddings.iter().map(|p| dot(&q, p)).collect();
            let probs = softmax(&logits);
            loss += -probs[y.index()].max(PROB_FLOOR).ln();
            // ∂l/∂logit_C = s_C − [C = y]
            let mut up_q = vec![0.0; d];
            for (c, (&p, emb)) in probs.iter().zip(&cache.embeddings).enumerate() {
                let coef = p - if c == y.index() { 1.0 } else { 0.0 };
                if coef == 0.0 {
                    continue;
                }
                for j in 0..d {
                    up_q[j] += coef * emb[j];
                    label_upstream[c][j] += coef * q[j];
                }
            }
            self.query.backward_accumulate(&tape, &up_q, &mut grad[..n_psi])?;
            count += 1;
        }
        for (tape, up) in cache.tapes.iter().zip(&label_upstream) {
            if up.iter().all(|&u| u == 0.0) {
                continue;
            }
            self.label.backward_accumulate(tape, up, &mut grad[n_psi..])?;
        }
        Ok(GradientSum { grad, loss, count })
    }

    pub fn write_checkpoint<W: std::io::Write>(&self, out: W) -> Result<()> {
        checkpoint::write_networks(out, &[&self.query, &self.label])
    }

    pub fn read_checkpoint<R: std::io::Read>(input: R) -> Result<Self> {
        let mut nets = checkpoint::read_networks(input)?;
        if nets.len() != 2 {
            return Err(Error::Checkpoint(format!(
                "calibrator checkpoint holds {} networks, expected 2",
                nets.len()
            )));
        }
        let label = nets.pop().expect("two networks");
        let query = nets.pop().expect("two networks");
        Self::from_networks(query, label)
    }
}
