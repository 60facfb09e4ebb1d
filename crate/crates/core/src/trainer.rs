//! The augmentation-and-calibration round loop and its baselines.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{self, AcquisitionReport, BonusKind, SnapshotSums};
use crate::calibrator::{default_hidden_width, CalibratorPair, ClassId, GradientSum, LabelSet};
use crate::dataset::{ClassDataset, Origin};
use crate::error::{check_dim, Error, Result};
use crate::nn::{AdamConfig, AdamState, CosineSchedule};
use crate::providers::{GenerationRequest, Generator};
use crate::records::{read_jsonl, write_jsonl, EmbeddingRecord};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Adamab,
    RandomAug,
    InitOnly,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Adamab => "adamab",
            Mode::RandomAug => "random_aug",
            Mode::InitOnly => "init_only",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adamab" => Ok(Mode::Adamab),
            "random_aug" => Ok(Mode::RandomAug),
            "init_only" => Ok(Mode::InitOnly),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected adamab, random_aug or init_only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub rounds: usize,
    pub aug_rounds: usize,
    pub delta_n: usize,
    pub alpha: f64,
    pub lr: f64,
    /// `η_T / η_0` for the cosine schedule.
    pub final_lr_ratio: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub mode: Mode,
    pub seed: u64,
    /// One full-batch step per round instead of a minibatch epoch.
    pub full_batch: bool,
    pub eval_stride: usize,
    pub bonus: BonusKind,
    /// Hidden width of both calibrators; defaults to `d_e / 4`.
    pub hidden: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rounds: 30,
            aug_rounds: 18,
            delta_n: 5,
            alpha: 100.0,
            lr: 0.005,
            final_lr_ratio: 0.5,
            weight_decay: 1e-4,
            batch_size: 32,
            mode: Mode::Adamab,
            seed: 0,
            full_batch: false,
            eval_stride: 1,
            bonus: BonusKind::Relaxed,
            hidden: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.rounds == 0 {
            return fail("rounds must be >= 1".into());
        }
        if self.aug_rounds > self.rounds {
            return fail(format!("aug_rounds {} exceeds rounds {}", self.aug_rounds, self.rounds));
        }
        if self.mode != Mode::InitOnly && self.aug_rounds > 0 && self.delta_n == 0 {
            return fail("delta_n must be >= 1 when augmenting".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if self.eval_stride == 0 {
            return fail("eval_stride must be >= 1".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if self.hidden == Some(0) {
            return fail("hidden width must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.final_lr_ratio > 0.0 && self.final_lr_ratio <= 1.0) {
            return fail(format!("final_lr_ratio must be in (0, 1], got {}", self.final_lr_ratio));
        }
        Ok(())
    }

    pub fn augments(&self, round: usize) -> bool {
        self.mode != Mode::InitOnly && round <= self.aug_rounds
    }

    pub fn schedule(&self) -> Result<CosineSchedule> {
        CosineSchedule::with_ratio(self.lr, self.final_lr_ratio, self.rounds)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Metrics for one round. Wall-clock time is deliberately absent so that
/// streams from identical runs compare byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub mode: Mode,
    pub chosen_class: Option<ClassId>,
    pub acquisition: Option<AcquisitionReport>,
    pub train_loss: f64,
    pub accuracy: Option<f64>,
    pub lr: f64,
    pub n: usize,
    pub counts: Vec<usize>,
    pub max_count_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// `confusion[true][predicted]`, zero-based class indices.
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate(pair: &CalibratorPair, test: &[(Vec<f64>, ClassId)], labels: &LabelSet) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Precondition("empty evaluation set".into()));
    }
    let k = labels.len();
    let cache = pair.label_cache(labels)?;
    let mut confusion = vec![vec![0; k]; k];
    let mut correct = 0;
    for (e, y) in test {
        labels.check_class(*y)?;
        let pred = pair.score_with(&cache, e)?.predicted;
        confusion[y.index()][pred.index()] += 1;
        correct += usize::from(pred == *y);
    }
    Ok(Evaluation {
        accuracy: correct as f64 / test.len() as f64,
        correct,
        total: test.len(),
        confusion,
    })
}

/// Coarse record of what a round did, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    Snapshot { round: usize, n: usize, updates: u64 },
    Generate { round: usize, class: ClassId, count: usize },
    Augment { round: usize, n: usize },
    Update { round: usize, steps: usize },
    Evaluate { round: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ResumeState {
    next_round: usize,
    config: TrainConfig,
    adam: AdamState,
    generator_history: Vec<(ClassId, usize)>,
}

const STATE_FILE: &str = "state.json";
const CHECKPOINT_FILE: &str = "calibrator.ckpt";
const DATASET_FILE: &str = "dataset.jsonl";

pub struct Trainer {
    config: TrainConfig,
    labels: LabelSet,
    pair: CalibratorPair,
    adam: AdamState,
    schedule: CosineSchedule,
    dataset: ClassDataset,
    generator: Box<dyn Generator>,
    test: Vec<(Vec<f64>, ClassId)>,
    next_round: usize,
    generator_history: Vec<(ClassId, usize)>,
    trace: Option<Vec<TraceEvent>>,
}

impl Trainer {
    pub fn new(
        config: TrainConfig,
        labels: LabelSet,
        dataset: ClassDataset,
        generator: Box<dyn Generator>,
        test: Vec<(Vec<f64>, ClassId)>,
    ) -> Result<Self> {
        config.validate()?;
        if dataset.num_classes() != labels.len() {
            return Err(Error::Config(format!(
                "dataset has {} classes, label set has {}",
                dataset.num_classes(),
                labels.len()
            )));
        }
        check_dim(labels.dim(), dataset.dim())?;
        for (e, y) in &test {
            check_dim(labels.dim(), e.len())?;
            labels.check_class(*y)?;
        }
        let d = labels.dim();
        let hidden = config.hidden.unwrap_or_else(|| default_hidden_width(d));
        let mut rng = seeds::stream(config.seed, "calibrator-init", &[]);
        let pair = CalibratorPair::with_hidden(d, hidden, &mut rng);
        let adam = AdamState::new(pair.num_params(), config.adam());
        let schedule = config.schedule()?;
        Ok(Self {
            config,
            labels,
            pair,
            adam,
            schedule,
            dataset,
            generator,
            test,
            next_round: 1,
            generator_history: Vec::new(),
            trace: None,
        })
    }

    /// Records a [`TraceEvent`] for every step of every round.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn trace(&self) -> &[TraceEvent] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn pair(&self) -> &CalibratorPair {
        &self.pair
    }

    pub fn dataset(&self) -> &ClassDataset {
        &self.dataset
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn generator(&self) -> &dyn Generator {
        self.generator.as_ref()
    }

    pub fn next_round(&self) -> usize {
        self.next_round
    }

    pub fn is_finished(&self) -> bool {
        self.next_round > self.config.rounds
    }

    fn record(&mut self, event: TraceEvent) {
        if let Some(t) = &mut self.trace {
            t.push(event);
        }
    }

    fn draw_random_class(&self, round: usize) -> ClassId {
        let mut rng = seeds::stream(self.config.seed, "random-aug", &[round as u64]);
        ClassId::from_index(rng.random_range(0..self.labels.len()))
    }

    /// Runs one round. On error the trainer is left at the end of the
    /// previous round and the round can be retried.
    pub fn step(&mut self) -> Result<RoundLog> {
        if self.is_finished() {
            return Err(Error::Precondition(format!("all {} rounds already ran", self.config.rounds)));
        }
        let t = self.next_round;
        let augmenting = self.config.augments(t);
        let wants_snapshot = (augmenting && self.config.mode == Mode::Adamab) || self.config.full_batch;

        let mut snapshot: Option<SnapshotSums> = None;
        let mut acquisition = None;
        if wants_snapshot {
            let cache = self.pair.label_cache(&self.labels)?;
            let (snap, sums) = bandit::snapshot_with_sums(&self.pair, &self.dataset, &cache)?;
            self.record(TraceEvent::Snapshot {
                round: t,
                n: self.dataset.len(),
                updates: self.adam.step,
            });
            if augmenting && self.config.mode == Mode::Adamab {
                let shiftings = snap.shifting_estimates(self.config.delta_n);
                acquisition = Some(bandit::select_from_shiftings(
                    &shiftings,
                    snap.counts(),
                    self.config.alpha,
                    self.config.delta_n,
                    self.config.bonus,
                )?);
            }
            snapshot = Some(sums);
        }

        let mut chosen = None;
        let n_before = self.dataset.len();
        if augmenting {
            let class = match &acquisition {
                Some(report) => report.chosen,
                None => self.draw_random_class(t),
            };
            let request = GenerationRequest {
                class,
                count: self.config.delta_n,
                round: t,
            };
            let vectors = self.generator.generate(request)?;
            if vectors.len() != request.count {
                return Err(Error::Remote(format!(
                    "generator returned {} samples, {} requested",
                    vectors.len(),
                    request.count
                )));
            }
            for v in &vectors {
                check_dim(self.dataset.dim(), v.len())?;
            }
            self.record(TraceEvent::Generate {
                round: t,
                class,
                count: vectors.len(),
            });
            self.generator_history.push((class, vectors.len()));
            self.dataset.augment(class, vectors, t)?;
            self.record(TraceEvent::Augment {
                round: t,
                n: self.dataset.len(),
            });
            chosen = Some(class);
        }

        let lr = self.schedule.lr_at(t);
        let (train_loss, steps) = match snapshot.filter(|_| self.config.full_batch) {
            Some(sums) => (self.full_batch_update(sums, n_before, lr)?, 1),
            None => self.minibatch_epoch(t, lr)?,
        };
        self.record(TraceEvent::Update { round: t, steps });

        let accuracy = if t % self.config.eval_stride == 0 || t == self.config.rounds {
            self.record(TraceEvent::Evaluate { round: t });
            Some(evaluate(&self.pair, &self.test, &self.labels)?.accuracy)
        } else {
            None
        };

        self.next_round += 1;
        Ok(RoundLog {
            round: t,
            mode: self.config.mode,
            chosen_class: chosen,
            acquisition,
            train_loss,
            accuracy,
            lr,
            n: self.dataset.len(),
            counts: self.dataset.counts(),
            max_count_ratio: self.dataset.max_count_ratio(),
        })
    }

    /// Single step on the mean gradient over the whole current dataset,
    /// reusing the snapshot sums for the samples that were already present.
    fn full_batch_update(&mut self, sums: SnapshotSums, n_before: usize, lr: f64) -> Result<f64> {
        let cache = self.pair.label_cache(&self.labels)?;
        let fresh = self.pair.accumulate(
            &cache,
            self.dataset.samples()[n_before..]
                .iter()
                .map(|s| (s.embedding.as_slice(), s.class)),
        )?;
        let mut total = sums.total();
        total.grad.iter_mut().zip(&fresh.grad).for_each(|(a, b)| *a += b);
        total.loss += fresh.loss;
        total.count += fresh.count;
        self.apply(&total, lr)?;
        Ok(total.mean_loss())
    }

    fn minibatch_epoch(&mut self, round: usize, lr: f64) -> Result<(f64, usize)> {
        let batches = self
            .dataset
            .minibatches(self.config.batch_size, self.config.seed, round as u64);
        let mut loss = 0.0;
        for batch in &batches {
            let cache = self.pair.label_cache(&self.labels)?;
            let sum = self.pair.accumulate(
                &cache,
                batch.iter().map(|&p| {
                    let s = self.dataset.sample_at(p);
                    (s.embedding.as_slice(), s.class)
                }),
            )?;
            loss += sum.loss;
            self.apply(&sum, lr)?;
        }
        Ok((loss / self.dataset.len() as f64, batches.len()))
    }

    fn apply(&mut self, sum: &GradientSum, lr: f64) -> Result<()> {
        let grad = sum.mean_grad();
        let mut params = self.pair.params();
        self.adam.step(&mut params, &grad, lr)?;
        self.pair.set_params(&params)
    }

    /// Runs the remaining rounds, passing each log to `sink`. If a provider
    /// fails and `state_dir` is given, the state at the start of the failed
    /// round is saved there and [`Error::Aborted`] is returned.
    pub fn run<F>(&mut self, state_dir: Option<&Path>, mut sink: F) -> Result<()>
    where
        F: FnMut(&RoundLog) -> Result<()>,
    {
        while !self.is_finished() {
            match self.step() {
                Ok(log) => sink(&log)?,
                Err(e) if e.is_provider_failure() && state_dir.is_some() => {
                    let dir = state_dir.expect("checked above");
                    self.save_state(dir)?;
                    return Err(Error::Aborted {
                        round: self.next_round,
                        state: dir.to_path_buf(),
                        source: Box::new(e),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    pub fn final_evaluation(&self) -> Result<Evaluation> {
        evaluate(&self.pair, &self.test, &self.labels)
    }

    /// Writes everything needed to continue from [`Self::next_round`].
    pub fn save_state(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let state = ResumeState {
            next_round: self.next_round,
            config: self.config.clone(),
            adam: self.adam.clone(),
            generator_history: self.generator_history.clone(),
        };
        fs::write(dir.join(STATE_FILE), serde_json::to_vec_pretty(&state)?)?;
        self.pair
            .write_checkpoint(std::io::BufWriter::new(fs::File::create(dir.join(CHECKPOINT_FILE))?))?;
        write_jsonl(&dir.join(DATASET_FILE), &self.dataset.to_records())?;
        Ok(dir.to_path_buf())
    }

    /// Restores a trainer saved by [`Self::save_state`]. The generator must be
    /// built fresh from the same configuration; it is fast-forwarded past the
    /// samples it already produced.
    pub fn resume(
        dir: &Path,
        labels: LabelSet,
        mut generator: Box<dyn Generator>,
        test: Vec<(Vec<f64>, ClassId)>,
    ) -> Result<Self> {
        let state: ResumeState = serde_json::from_slice(&fs::read(dir.join(STATE_FILE))?)?;
        let records: Vec<EmbeddingRecord> = read_jsonl(&dir.join(DATASET_FILE))?;
        let dataset = ClassDataset::from_records(&records, &labels)?;
        let pair = CalibratorPair::read_checkpoint(std::io::BufReader::new(fs::File::open(dir.join(CHECKPOINT_FILE))?))?;
        for &(class, count) in &state.generator_history {
            generator.fast_forward(class, count)?;
        }
        let mut trainer = Self::new(state.config, labels, dataset, generator, test)?;
        check_dim(trainer.pair.num_params(), pair.num_params())?;
        check_dim(trainer.pair.num_params(), state.adam.dim())?;
        trainer.pair = pair;
        trainer.adam = state.adam;
        trainer.next_round = state.next_round;
        trainer.generator_history = state.generator_history;
        Ok(trainer)
    }
}

/// Number of synthetic samples per generation round, read back from the store.
pub fn synthetic_by_round(ds: &ClassDataset) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for s in ds.samples() {
        if let Origin::Synthetic { round } = s.origin {
            match out.last_mut() {
                Some((r, c)) if *r == round => *c += 1,
                _ => out.push((round, 1)),
            }
        }
    }
    out
}
