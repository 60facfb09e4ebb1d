//! `export-plots`: per-run CSV traces and a merged summary.

use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use embedcal::trainer::RoundLog;
use serde::Serialize;
use walkdir::WalkDir;

use crate::config::read_config;
use crate::exit::{runtime, usage, CliResult};
use crate::train::{METRICS, RESOLVED_CONFIG};

#[derive(Debug, Serialize)]
struct TraceRow {
    t: usize,
    mode: &'static str,
    loss: f64,
    accuracy: Option<f64>,
    chosen_class: Option<usize>,
    max_count_ratio: f64,
    samples_per_class: f64,
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    run: String,
    mode: &'static str,
    alpha: Option<f64>,
    delta_n: Option<usize>,
    seed: Option<u64>,
    rounds: usize,
    final_accuracy: Option<f64>,
    samples_per_class: f64,
    max_count_ratio: f64,
}

fn metrics_files(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_file() {
            out.push(input.clone());
        } else if input.is_dir() {
            let mut found: Vec<PathBuf> = WalkDir::new(input)
                .sort_by_file_name()
                .into_iter()
                .filter_map(|e| e.ok())
                .filter(|e| e.file_type().is_file() && e.file_name() == METRICS)
                .map(|e| e.into_path())
                .collect();
            out.append(&mut found);
        } else {
            return Err(usage(anyhow!("input {} does not exist", input.display())));
        }
    }
    Ok(out)
}

fn read_logs(path: &Path) -> CliResult<Vec<RoundLog>> {
    let mut logs = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        logs.push(
            serde_json::from_str(&line)
                .map_err(|e| runtime(anyhow!("{}:{}: not a metrics record: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(logs)
}

/// The run directory's name, prefixed with its parent's when already taken.
fn run_name(metrics: &Path, used: &[String]) -> String {
    let dir = metrics.parent().unwrap_or(Path::new("."));
    let part = |p: Option<&Path>| p.and_then(Path::file_name).map(|n| n.to_string_lossy().into_owned());
    let short = part(Some(dir)).unwrap_or_else(|| "run".into());
    let mut name = match part(dir.parent()) {
        Some(parent) if used.contains(&short) => format!("{parent}_{short}"),
        _ => short,
    };
    let base = name.clone();
    let mut k = 2;
    while used.contains(&name) {
        name = format!("{base}-{k}");
        k += 1;
    }
    name
}

/// Returns the number of runs exported.
pub fn cmd_export_plots(inputs: &[PathBuf], out: &Path) -> CliResult<usize> {
    let files = metrics_files(inputs)?;
    if files.is_empty() {
        return Err(usage(anyhow!("no {METRICS} found in the given inputs")));
    }
    fs::create_dir_all(out)?;
    let mut names = Vec::new();
    let mut summary = csv::Writer::from_path(out.join("summary.csv")).map_err(runtime)?;
    for file in &files {
        let logs = read_logs(file)?;
        let Some(last) = logs.last() else {
            return Err(usage(anyhow!("{} is empty", file.display())));
        };
        let name = run_name(file, &names);
        let resolved = file.parent().map(|d| d.join(RESOLVED_CONFIG)).filter(|p| p.exists());
        let cfg = resolved.map(|p| read_config(&p)).transpose()?;
        let k = last.counts.len().max(1) as f64;

        let mut w = csv::Writer::from_path(out.join(format!("{name}.csv"))).map_err(runtime)?;
        for l in &logs {
            w.serialize(TraceRow {
                t: l.round,
                mode: l.mode.as_str(),
                loss: l.train_loss,
                accuracy: l.accuracy,
                chosen_class: l.chosen_class.map(|c| c.0),
                max_count_ratio: l.max_count_ratio,
                samples_per_class: l.n as f64 / k,
            })
            .map_err(runtime)?;
        }
        w.flush()?;

        let final_accuracy = logs.iter().rev().find_map(|l| l.accuracy);
        let alpha = cfg
            .as_ref()
            .map(|c| c.train.alpha)
            .or_else(|| logs.iter().find_map(|l| l.acquisition.as_ref().map(|a| a.alpha)));
        summary
            .serialize(SummaryRow {
                run: name.clone(),
                mode: last.mode.as_str(),
                alpha,
                delta_n: cfg.as_ref().map(|c| c.train.delta_n),
                seed: cfg.as_ref().map(|c| c.train.seed),
                rounds: last.round,
                final_accuracy,
                samples_per_class: last.n as f64 / k,
                max_count_ratio: last.max_count_ratio,
            })
            .map_err(runtime)?;
        names.push(name);
    }
    summary.flush()?;
    Ok(files.len())
}
