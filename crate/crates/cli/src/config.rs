//! Run configuration files and task loading.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use embedcal::calibrator::{ClassId, Label, LabelSet};
use embedcal::dataset::ClassDataset;
use embedcal::providers::{EmbedderConfig, GeneratorConfig, Generator, PromptTemplate, RemoteConfig, RemoteGenerator};
use embedcal::records::{read_jsonl, EmbeddingRecord, LabelRecord};
use embedcal::task::{SyntheticTask, TaskSpec, TestSet};
use embedcal::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::exit::{usage, CliResult};

/// Everything a run depends on. The copy written next to the outputs has all
/// defaults filled in and paths made absolute.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub task: TaskSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSource {
    /// Gaussian task generated from `train.seed`.
    Synthetic(TaskSpec),
    Files(FileTask),
}

impl Default for TaskSource {
    fn default() -> Self {
        TaskSource::Synthetic(TaskSpec::default())
    }
}

/// Record files. `vector` may be replaced by `text` when `embedder` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileTask {
    pub labels: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    /// JSON array of per-class mean vectors, for the Gaussian oracle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub means: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder: Option<EmbedderConfig>,
}

/// Flag values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<embedcal::trainer::Mode>,
    pub alpha: Option<f64>,
    pub delta_n: Option<usize>,
    pub aug_rounds: Option<usize>,
    pub rounds: Option<usize>,
    pub generator_endpoint: Option<String>,
    pub generator_model: Option<String>,
    pub embedder_endpoint: Option<String>,
    pub embedder_model: Option<String>,
    pub api_key_env: Option<String>,
}

pub fn read_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(usage)?;
    let mut cfg: RunConfig = toml::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))
        .map_err(usage)?;
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.rebase(base);
    Ok(cfg)
}

fn rebase_path(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
    if let Ok(abs) = p.canonicalize() {
        *p = abs;
    }
}

fn rebase_embedder(base: &Path, e: &mut EmbedderConfig) {
    match e {
        EmbedderConfig::File { path } => rebase_path(base, path),
        EmbedderConfig::Remote { cache_path: Some(p), .. } => rebase_path(base, p),
        EmbedderConfig::Remote { .. } => {}
    }
}

impl RunConfig {
    fn rebase(&mut self, base: &Path) {
        if let TaskSource::Files(f) = &mut self.task {
            rebase_path(base, &mut f.labels);
            rebase_path(base, &mut f.train);
            rebase_path(base, &mut f.test);
            if let Some(m) = &mut f.means {
                rebase_path(base, m);
            }
            if let Some(e) = &mut f.embedder {
                rebase_embedder(base, e);
            }
        }
        match &mut self.generator {
            Some(GeneratorConfig::PoolReplay { path }) => rebase_path(base, path),
            Some(GeneratorConfig::Remote { embedder, .. }) => rebase_embedder(base, embedder),
            _ => {}
        }
    }

    /// Applies flags, fills the default generator and validates.
    pub fn resolve(mut self, o: &Overrides) -> CliResult<Self> {
        let t = &mut self.train;
        if let Some(v) = o.seed {
            t.seed = v;
        }
        if let Some(v) = o.mode {
            t.mode = v;
        }
        if let Some(v) = o.alpha {
            t.alpha = v;
        }
        if let Some(v) = o.delta_n {
            t.delta_n = v;
        }
        if let Some(v) = o.aug_rounds {
            t.aug_rounds = v;
        }
        if let Some(v) = o.rounds {
            t.rounds = v;
        }
        if self.generator.is_none() {
            self.generator = match &self.task {
                TaskSource::Synthetic(spec) => Some(GeneratorConfig::GaussianOracle { sigma: spec.sigma, seed: None }),
                TaskSource::Files(_) => None,
            };
        }
        self.apply_provider_flags(o)?;
        self.train.validate().map_err(usage)?;
        if self.generator.is_none() && self.train.mode != embedcal::trainer::Mode::InitOnly && self.train.aug_rounds > 0 {
            return Err(usage(anyhow::anyhow!(
                "mode {} generates data but no [generator] is configured",
                self.train.mode.as_str()
            )));
        }
        Ok(self)
    }

    fn apply_provider_flags(&mut self, o: &Overrides) -> CliResult<()> {
        let set = |r: &mut RemoteConfig, endpoint: &Option<String>, model: &Option<String>| {
            if let Some(e) = endpoint {
                r.endpoint = e.clone();
            }
            if let Some(m) = model {
                r.model = m.clone();
            }
            if let Some(k) = &o.api_key_env {
                r.api_key_env = Some(k.clone());
            }
        };
        let mut gen_remote = false;
        let mut emb_remote = false;
        if let Some(GeneratorConfig::Remote { remote, embedder, .. }) = &mut self.generator {
            set(remote, &o.generator_endpoint, &o.generator_model);
            gen_remote = true;
            if let EmbedderConfig::Remote { remote, .. } = embedder {
                set(remote, &o.embedder_endpoint, &o.embedder_model);
                emb_remote = true;
            }
        }
        if let TaskSource::Files(FileTask { embedder: Some(EmbedderConfig::Remote { remote, .. }), .. }) = &mut self.task {
            set(remote, &o.embedder_endpoint, &o.embedder_model);
            emb_remote = true;
        }
        if !gen_remote && (o.generator_endpoint.is_some() || o.generator_model.is_some()) {
            return Err(usage(anyhow::anyhow!("--generator-* flags need a remote [generator] in the config")));
        }
        if !emb_remote && (o.embedder_endpoint.is_some() || o.embedder_model.is_some()) {
            return Err(usage(anyhow::anyhow!("--embedder-* flags need a remote embedder in the config")));
        }
        if o.api_key_env.is_some() && !gen_remote && !emb_remote {
            return Err(usage(anyhow::anyhow!("--api-key-env given but no remote provider is configured")));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// A loaded task plus whatever the generator needs from it.
pub struct LoadedTask {
    pub labels: LabelSet,
    pub train: ClassDataset,
    pub test: TestSet,
    pub means: Option<Vec<Vec<f64>>>,
    /// Training texts per class, shown to a remote generator.
    pub texts: BTreeMap<ClassId, Vec<String>>,
}

fn embed_missing(records: &mut [EmbeddingRecord], embedder: &mut Option<Box<dyn embedcal::providers::Embedder>>) -> CliResult<()> {
    let missing: Vec<usize> = (0..records.len()).filter(|&i| records[i].vector.is_none()).collect();
    if missing.is_empty() {
        return Ok(());
    }
    let Some(e) = embedder.as_mut() else {
        return Err(usage(anyhow::anyhow!("records without vectors need an [task.embedder]")));
    };
    let texts: Vec<String> = missing
        .iter()
        .map(|&i| records[i].text.clone().ok_or_else(|| usage(anyhow::anyhow!("record has neither vector nor text"))))
        .collect::<CliResult<_>>()?;
    let vectors = e.embed_batch(&texts)?;
    for (&i, v) in missing.iter().zip(vectors) {
        records[i].vector = Some(v);
    }
    Ok(())
}

fn read_records<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> CliResult<Vec<T>> {
    if !path.exists() {
        return Err(usage(anyhow::anyhow!("{what} file {} does not exist", path.display())));
    }
    read_jsonl(path).map_err(usage)
}

pub fn load_task(cfg: &RunConfig) -> CliResult<LoadedTask> {
    match &cfg.task {
        TaskSource::Synthetic(spec) => {
            let t = SyntheticTask::generate(*spec, cfg.train.seed).map_err(usage)?;
            Ok(LoadedTask {
                labels: t.labels,
                train: t.train,
                test: t.test,
                means: Some(t.means),
                texts: BTreeMap::new(),
            })
        }
        TaskSource::Files(f) => {
            let mut embedder = f.embedder.as_ref().map(EmbedderConfig::build).transpose()?;
            let label_recs: Vec<LabelRecord> = read_records(&f.labels, "labels")?;
            let template = PromptTemplate::label_text();
            let mut labels = Vec::with_capacity(label_recs.len());
            for r in label_recs {
                let embedding = match r.vector {
                    Some(v) => v,
                    None => {
                        let Some(e) = embedder.as_mut() else {
                            return Err(usage(anyhow::anyhow!("label {} has no vector and no embedder is set", r.name)));
                        };
                        let text = template.render(&BTreeMap::from([
                            ("label", r.name.clone()),
                            ("description", r.description.clone()),
                        ]))?;
                        e.embed(&text)?
                    }
                };
                labels.push(Label {
                    class: ClassId(r.class),
                    name: r.name,
                    description: r.description,
                    embedding,
                });
            }
            let labels = LabelSet::new(labels).map_err(usage)?;

            let mut train: Vec<EmbeddingRecord> = read_records(&f.train, "train")?;
            embed_missing(&mut train, &mut embedder)?;
            let mut texts: BTreeMap<ClassId, Vec<String>> = BTreeMap::new();
            for r in &train {
                if let Some(t) = &r.text {
                    texts.entry(r.class.resolve(Some(&labels)).map_err(usage)?).or_default().push(t.clone());
                }
            }
            let dataset = ClassDataset::from_records(&train, &labels).map_err(usage)?;

            let mut test_recs: Vec<EmbeddingRecord> = read_records(&f.test, "test")?;
            embed_missing(&mut test_recs, &mut embedder)?;
            let mut test = Vec::with_capacity(test_recs.len());
            for r in test_recs {
                let class = r.class.resolve(Some(&labels)).map_err(usage)?;
                labels.check_class(class).map_err(usage)?;
                test.push((r.vector.expect("embedded above"), class));
            }

            let means = match &f.means {
                Some(p) => {
                    let text = fs::read_to_string(p).with_context(|| format!("reading means {}", p.display())).map_err(usage)?;
                    Some(serde_json::from_str(&text).with_context(|| format!("parsing means {}", p.display())).map_err(usage)?)
                }
                None => None,
            };
            Ok(LoadedTask {
                labels,
                train: dataset,
                test,
                means,
                texts,
            })
        }
    }
}

pub fn build_generator(cfg: &RunConfig, task: &LoadedTask) -> CliResult<Option<Box<dyn Generator>>> {
    let Some(g) = &cfg.generator else { return Ok(None) };
    if let GeneratorConfig::Remote { remote, template, temperature, embedder } = g {
        let mut r = RemoteGenerator::new(
            remote.clone(),
            GeneratorConfig::template(template),
            *temperature,
            task.labels.clone(),
            embedder.build().map_err(usage)?,
        );
        for (class, texts) in &task.texts {
            r = r.with_existing(*class, texts.clone());
        }
        return Ok(Some(Box::new(r)));
    }
    match g.build(&task.labels, task.means.as_deref(), cfg.train.seed) {
        Ok(g) => Ok(Some(g)),
        Err(e) => Err(usage(e)),
    }
}
