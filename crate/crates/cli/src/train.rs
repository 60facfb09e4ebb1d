//! `train` and `eval` subcommands.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use embedcal::calibrator::CalibratorPair;
use embedcal::providers::{GenerationRequest, Generator};
use embedcal::records::write_jsonl;
use embedcal::seeds;
use embedcal::trainer::{evaluate, Evaluation, Mode, RoundLog, Trainer};
use serde::{Deserialize, Serialize};

use crate::config::{build_generator, load_task, read_config, Overrides, RunConfig};
use crate::exit::{runtime, usage, CliError, CliResult};

pub const RESOLVED_CONFIG: &str = "resolved-config.toml";
pub const METRICS: &str = "metrics.jsonl";
pub const FINAL: &str = "final.json";
pub const CHECKPOINT: &str = "calibrator.ckpt";
pub const DATASET: &str = "dataset.jsonl";
pub const TIMINGS: &str = "timings.log";
pub const STATE_DIR: &str = "state";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub mode: Mode,
    pub rounds: usize,
    pub seed: u64,
    /// Accuracy of the uncalibrated embeddings on the same test set.
    pub raw_accuracy: f64,
    pub evaluation: Evaluation,
}

/// Stands in when a run never generates.
struct NoGenerator;

impl Generator for NoGenerator {
    fn generate(&mut self, _: GenerationRequest) -> embedcal::Result<Vec<Vec<f64>>> {
        Err(embedcal::Error::Config("no generator configured".into()))
    }

    fn produced(&self) -> usize {
        0
    }
}

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub resume: bool,
    pub overrides: Overrides,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Keeps rows of rounds before `next_round` and returns an appending writer.
fn reopen_metrics(path: &Path, next_round: usize) -> CliResult<BufWriter<File>> {
    let mut kept = String::new();
    if path.exists() {
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let log: RoundLog = serde_json::from_str(&line).map_err(|e| runtime(anyhow!("corrupt {}: {e}", path.display())))?;
            if log.round < next_round {
                kept.push_str(&line);
                kept.push('\n');
            }
        }
    }
    fs::write(path, kept)?;
    Ok(BufWriter::new(OpenOptions::new().append(true).open(path)?))
}

fn raw_accuracy(cfg: &RunConfig, task: &crate::config::LoadedTask) -> CliResult<f64> {
    let dim = task.labels.dim();
    let pair = match cfg.train.hidden {
        Some(h) => CalibratorPair::with_hidden(dim, h, &mut seeds::stream(0, "raw-baseline", &[])),
        None => CalibratorPair::new(dim, &mut seeds::stream(0, "raw-baseline", &[])),
    };
    Ok(evaluate(&pair, &task.test, &task.labels)?.accuracy)
}

pub fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let out = &args.out;
    let state_dir = out.join(STATE_DIR);
    let cfg = if args.resume {
        if args.config.is_some() {
            return Err(usage(anyhow!("--resume reads {} from the output directory; drop --config", RESOLVED_CONFIG)));
        }
        if !state_dir.join("state.json").exists() {
            return Err(usage(anyhow!("no resumable state in {}", state_dir.display())));
        }
        read_config(&out.join(RESOLVED_CONFIG))?
    } else {
        let base = match &args.config {
            Some(p) => read_config(p)?,
            None => RunConfig::default(),
        };
        base.resolve(&args.overrides)?
    };
    let task = load_task(&cfg)?;
    let generator = build_generator(&cfg, &task)?.unwrap_or_else(|| Box::new(NoGenerator));
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display())).map_err(usage)?;
    let raw = raw_accuracy(&cfg, &task)?;

    let mut trainer = if args.resume {
        Trainer::resume(&state_dir, task.labels.clone(), generator, task.test.clone())?
    } else {
        fs::write(out.join(RESOLVED_CONFIG), cfg.to_toml()?)?;
        Trainer::new(cfg.train.clone(), task.labels.clone(), task.train, generator, task.test.clone())?
    };
    let mut metrics = reopen_metrics(&out.join(METRICS), trainer.next_round())?;
    let mut timings = OpenOptions::new().create(true).append(true).open(out.join(TIMINGS))?;
    writeln!(
        timings,
        "start {:.3} mode={} seed={} from_round={}",
        unix_now(),
        cfg.train.mode.as_str(),
        cfg.train.seed,
        trainer.next_round()
    )?;

    let mut clock = Instant::now();
    let result = trainer.run(Some(&state_dir), |log| {
        serde_json::to_writer(&mut metrics, log)?;
        metrics.write_all(b"\n")?;
        metrics.flush()?;
        writeln!(timings, "round {} {:.3}ms", log.round, clock.elapsed().as_secs_f64() * 1e3)?;
        clock = Instant::now();
        log::info!(
            "round {} loss {:.4} accuracy {} class {}",
            log.round,
            log.train_loss,
            log.accuracy.map_or("-".into(), |a| format!("{a:.4}")),
            log.chosen_class.map_or("-".into(), |c| c.to_string())
        );
        Ok(())
    });
    if let Err(e) = result {
        writeln!(timings, "abort {:.3}", unix_now())?;
        let mut err: CliError = e.into();
        if matches!(err.error.downcast_ref::<embedcal::Error>(), Some(embedcal::Error::Aborted { .. })) {
            err.code = crate::exit::RUNTIME;
            err.error = err.error.context(format!("rerun with `embedcal train --resume --out {}`", out.display()));
        }
        return Err(err);
    }

    let evaluation = trainer.final_evaluation()?;
    trainer
        .pair()
        .write_checkpoint(BufWriter::new(File::create(out.join(CHECKPOINT))?))?;
    write_jsonl(&out.join(DATASET), &trainer.dataset().to_records())?;
    let report = FinalReport {
        mode: cfg.train.mode,
        rounds: cfg.train.rounds,
        seed: cfg.train.seed,
        raw_accuracy: raw,
        evaluation,
    };
    fs::write(out.join(FINAL), serde_json::to_string_pretty(&report)? + "\n")?;
    if state_dir.exists() {
        fs::remove_dir_all(&state_dir)?;
    }
    writeln!(timings, "finish {:.3}", unix_now())?;
    println!(
        "{} seed {}: accuracy {:.4} ({}/{}), uncalibrated {:.4}; outputs in {}",
        cfg.train.mode.as_str(),
        cfg.train.seed,
        report.evaluation.accuracy,
        report.evaluation.correct,
        report.evaluation.total,
        raw,
        out.display()
    );
    Ok(())
}

pub struct EvalArgs {
    pub run: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let cfg = match (&args.run, &args.config) {
        (Some(_), Some(_)) => return Err(usage(anyhow!("give either --run or --config, not both"))),
        (Some(run), None) => read_config(&run.join(RESOLVED_CONFIG))?,
        (None, Some(c)) => read_config(c)?.resolve(&Overrides::default())?,
        (None, None) => return Err(usage(anyhow!("eval needs --run or --config"))),
    };
    let ckpt = match (&args.checkpoint, &args.run) {
        (Some(c), _) => c.clone(),
        (None, Some(run)) => run.join(CHECKPOINT),
        (None, None) => return Err(usage(anyhow!("--config needs --checkpoint"))),
    };
    if !ckpt.exists() {
        return Err(usage(anyhow!("checkpoint {} does not exist", ckpt.display())));
    }
    let task = load_task(&cfg)?;
    let pair = CalibratorPair::read_checkpoint(BufReader::new(File::open(&ckpt)?))?;
    if pair.embed_dim() != task.labels.dim() {
        return Err(usage(anyhow!(
            "checkpoint is for dimension {}, task has {}",
            pair.embed_dim(),
            task.labels.dim()
        )));
    }
    let report = FinalReport {
        mode: cfg.train.mode,
        rounds: cfg.train.rounds,
        seed: cfg.train.seed,
        raw_accuracy: raw_accuracy(&cfg, &task)?,
        evaluation: evaluate(&pair, &task.test, &task.labels)?,
    };
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &args.out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}
