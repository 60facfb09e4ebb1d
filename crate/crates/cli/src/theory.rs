//! `theory` subcommands: each writes a CSV trace and prints one PASS/FAIL line.

use std::path::Path;

use anyhow::anyhow;
use clap::{Args, Subcommand};
use embedcal::bandit::{theoretical_alpha, BonusKind};
use embedcal::seeds;
use embedcal::theorylab::{
    adversarial_counts, biased_gd_trace, hoeffding_trial, log_log_slope, regret_sim, AdversarialInstance,
    BanditSimProblem, BiasSchedule, BoundedDistribution, HoeffdingSetup, QuadraticProblem, RegretSetup,
};
use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;

use crate::exit::{runtime, usage, CliResult};

#[derive(Debug, Subcommand)]
pub enum TheoryCommand {
    /// Monte Carlo check of the vector concentration bound.
    Hoeffding(HoeffdingArgs),
    /// Prefix inequality of biased gradient descent on random quadratics.
    Theorem1(Theorem1Args),
    /// Regret decay of the acquisition policy on a simulated bandit.
    Regret(RegretArgs),
    /// Relaxed against tight confidence bonus on the adversarial instance.
    CbCompare(CbCompareArgs),
}

#[derive(Debug, Args)]
pub struct HoeffdingArgs {
    #[arg(long, default_value_t = 4)]
    dim: usize,
    /// Coordinate bound G.
    #[arg(long, default_value_t = 1.0)]
    bound: f64,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    horizon: usize,
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    /// uniform, rademacher or constant.
    #[arg(long, default_value = "uniform")]
    distribution: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
pub struct Theorem1Args {
    #[arg(long, default_value_t = 20)]
    problems: usize,
    /// Largest dimension; each problem draws d from 2..=dim.
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Fixed step size. Refused when it exceeds 1/β of a problem.
    #[arg(long)]
    eta: Option<f64>,
    /// Step size as a multiple of 1/β, used when --eta is absent.
    #[arg(long, default_value_t = 1.0)]
    eta_scale: f64,
    /// Largest bias norm per step.
    #[arg(long, default_value_t = 2.0)]
    bias: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
pub struct RegretArgs {
    #[arg(long, default_value_t = 100.0)]
    alpha: f64,
    #[arg(long, default_value_t = 6)]
    arms: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Spread of the arm means.
    #[arg(long, default_value_t = 0.5)]
    scale: f64,
    /// Half-width of the per-sample noise.
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    problem_seed: u64,
    #[arg(long, default_value_t = 1000)]
    rounds: usize,
    #[arg(long, default_value_t = 50)]
    seeds: usize,
    #[arg(long, default_value_t = 1)]
    delta_n: usize,
    /// relaxed or tight.
    #[arg(long, default_value = "relaxed")]
    bonus: String,
}

#[derive(Debug, Args)]
pub struct CbCompareArgs {
    #[arg(long, default_value_t = 1000)]
    rounds: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Comma-separated per-arm gradient gaps.
    #[arg(long, default_value = "0,1", value_delimiter = ',')]
    gaps: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    init: usize,
    #[arg(long, default_value_t = 1)]
    delta_n: usize,
}

fn parse_bonus(s: &str) -> CliResult<BonusKind> {
    match s {
        "relaxed" => Ok(BonusKind::Relaxed),
        "tight" => Ok(BonusKind::Tight),
        _ => Err(usage(anyhow!("unknown bonus {s:?} (expected relaxed or tight)"))),
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(runtime)?;
    for r in rows {
        w.serialize(r).map_err(runtime)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs one verification; returns whether the property held.
pub fn cmd_theory(cmd: TheoryCommand, out: &Path) -> CliResult<bool> {
    std::fs::create_dir_all(out)?;
    let (name, pass, detail) = match cmd {
        TheoryCommand::Hoeffding(a) => hoeffding(a, out)?,
        TheoryCommand::Theorem1(a) => theorem1(a, out)?,
        TheoryCommand::Regret(a) => regret(a, out)?,
        TheoryCommand::CbCompare(a) => cb_compare(a, out)?,
    };
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    Ok(pass)
}

type Verdict = (&'static str, bool, String);

fn hoeffding(a: HoeffdingArgs, out: &Path) -> CliResult<Verdict> {
    let distribution: BoundedDistribution = a.distribution.parse()?;
    let setup = HoeffdingSetup {
        dim: a.dim,
        bound: a.bound,
        n: a.n,
        horizon: a.horizon,
        trials: a.trials,
        distribution,
        seed: a.seed,
    };
    let r = hoeffding_trial(&setup)?;
    #[derive(Serialize)]
    struct Row {
        dim: usize,
        bound: f64,
        n: usize,
        horizon: usize,
        distribution: String,
        trials: usize,
        epsilon: f64,
        violations: usize,
        rate: f64,
        std_error: f64,
        target: f64,
    }
    write_csv(
        &out.join("hoeffding.csv"),
        [Row {
            dim: a.dim,
            bound: a.bound,
            n: a.n,
            horizon: a.horizon,
            distribution: a.distribution,
            trials: r.trials,
            epsilon: r.epsilon,
            violations: r.violations,
            rate: r.rate,
            std_error: r.std_error,
            target: r.target,
        }],
    )?;
    Ok((
        "hoeffding",
        r.passes(),
        format!(
            "ε={:.4}, {} of {} trials exceeded it (rate {:.2e}, target {:.2e} + 3·se {:.2e})",
            r.epsilon, r.violations, r.trials, r.rate, r.target, r.std_error
        ),
    ))
}

fn theorem1(a: Theorem1Args, out: &Path) -> CliResult<Verdict> {
    if a.dim < 2 || a.problems == 0 || a.steps == 0 {
        return Err(usage(anyhow!("theorem1 needs --dim >= 2, --problems >= 1 and --steps >= 1")));
    }
    if !(a.eta_scale > 0.0 && a.eta_scale <= 1.0) {
        return Err(usage(anyhow!("--eta-scale must lie in (0, 1], got {}", a.eta_scale)));
    }
    #[derive(Serialize)]
    struct Row {
        problem: usize,
        dim: usize,
        step: usize,
        loss: f64,
        grad_norm_sq: f64,
        bias_norm_sq: f64,
        min_grad_norm_sq: f64,
        bound: f64,
        holds: bool,
    }
    let mut rows = Vec::new();
    let mut violations = 0;
    for q in 0..a.problems {
        let mut rng = seeds::stream(a.seed, "theorem1-cli", &[q as u64]);
        let d = rng.random_range(2..=a.dim);
        let rank = rng.random_range(1..=d);
        let problem = QuadraticProblem::random(d, rank, &mut rng)?;
        let eta = a.eta.unwrap_or(a.eta_scale / problem.beta());
        let bias = BiasSchedule::random(d, a.steps, a.bias, &mut rng);
        let start = DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0));
        let trace = biased_gd_trace(&problem, start, eta, &bias, a.steps)?;
        for r in &trace.rows {
            violations += usize::from(!r.holds);
            rows.push(Row {
                problem: q,
                dim: d,
                step: r.step,
                loss: r.loss,
                grad_norm_sq: r.grad_norm_sq,
                bias_norm_sq: r.bias_norm_sq,
                min_grad_norm_sq: r.min_grad_norm_sq,
                bound: r.bound(),
                holds: r.holds,
            });
        }
    }
    let total = rows.len();
    write_csv(&out.join("theorem1.csv"), rows)?;
    Ok((
        "theorem1",
        violations == 0,
        format!("{} quadratics × {} steps, {violations}/{total} prefix violations", a.problems, a.steps),
    ))
}

fn regret(a: RegretArgs, out: &Path) -> CliResult<Verdict> {
    if a.rounds < 20 {
        return Err(usage(anyhow!("regret needs --rounds >= 20 to measure decay")));
    }
    let problem = BanditSimProblem::random(a.arms, a.dim, a.scale, a.noise, a.problem_seed)?;
    let setup = RegretSetup {
        alpha: a.alpha,
        delta_n: a.delta_n,
        rounds: a.rounds,
        seeds: a.seeds,
        bonus: parse_bonus(&a.bonus)?,
        ..RegretSetup::default()
    };
    let r = regret_sim(&problem, &setup)?;
    #[derive(Serialize)]
    struct Row {
        t: usize,
        mean_regret: f64,
        mean_normalized_regret: f64,
        mean_max_ratio: f64,
        worst_max_ratio: f64,
    }
    write_csv(
        &out.join("regret.csv"),
        (0..a.rounds).map(|t| Row {
            t: t + 1,
            mean_regret: r.mean_regret[t],
            mean_normalized_regret: r.mean_normalized_regret[t],
            mean_max_ratio: r.mean_max_ratio[t],
            worst_max_ratio: r.worst_max_ratio[t],
        }),
    )?;
    let (early, late) = (r.mean_regret[9], r.mean_regret[a.rounds - 1]);
    let slope = log_log_slope(&r.mean_regret, 10, a.rounds).unwrap_or(f64::NAN);
    let theory = theoretical_alpha(a.dim, problem.grad_bound(), a.rounds);
    Ok((
        "regret",
        late * 3.0 <= early && slope <= -0.3,
        format!(
            "mean regret t=10 {early:.3e}, t={} {late:.3e} (factor {:.1}), log-log slope {slope:.3}; theoretical α for this problem {theory:.1}",
            a.rounds,
            early / late
        ),
    ))
}

fn cb_compare(a: CbCompareArgs, out: &Path) -> CliResult<Verdict> {
    if a.rounds < 20 {
        return Err(usage(anyhow!("cb-compare needs --rounds >= 20")));
    }
    let inst = AdversarialInstance {
        gaps: a.gaps,
        init_per_class: a.init,
        delta_n: a.delta_n,
        alpha: a.alpha,
    };
    let relaxed = adversarial_counts(&inst, BonusKind::Relaxed, a.rounds)?;
    let tight = adversarial_counts(&inst, BonusKind::Tight, a.rounds)?;
    #[derive(Serialize)]
    struct Row {
        t: usize,
        relaxed_ratio: f64,
        tight_ratio: f64,
    }
    write_csv(
        &out.join("cb-compare.csv"),
        (0..a.rounds).map(|t| Row {
            t: t + 1,
            relaxed_ratio: relaxed.ratios[t],
            tight_ratio: tight.ratios[t],
        }),
    )?;
    let (from, to) = (a.rounds / 10 - 1, a.rounds - 1);
    let rg = relaxed.ratios[to] / relaxed.ratios[from];
    let tg = tight.ratios[to] / tight.ratios[from];
    Ok((
        "cb-compare",
        rg <= 1.5 && tg >= 4.0,
        format!(
            "count ratio from t={} to t={}: relaxed {:.2} → {:.2} (×{rg:.2}), tight {:.1} → {:.1} (×{tg:.1})",
            from + 1,
            to + 1,
            relaxed.ratios[from],
            relaxed.ratios[to],
            tight.ratios[from],
            tight.ratios[to]
        ),
    ))
}
