//! Median final accuracy of each training mode over a range of seeds.
//!
//! ```text
//! cargo run --release --example method_sweep -- 20 [first_seed]
//! ```

use embedcal::task::{SyntheticTask, TaskSpec};
use embedcal::trainer::{Mode, TrainConfig, Trainer};

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 0 {
        0.5 * (xs[m - 1] + xs[m])
    } else {
        xs[m]
    }
}

fn final_accuracy(spec: TaskSpec, seed: u64, mode: Mode, alpha: f64) -> f64 {
    let task = SyntheticTask::generate(spec, seed).unwrap();
    let config = TrainConfig { mode, alpha, seed, eval_stride: 30, ..TrainConfig::default() };
    let gen = Box::new(task.oracle());
    let mut tr = Trainer::new(config, task.labels, task.train, gen, task.test).unwrap();
    tr.run(None, |_| Ok(())).unwrap();
    tr.final_evaluation().unwrap().accuracy
}

fn main() {
    let arg = |i: usize, default: u64| std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let (seeds, first) = (arg(1, 20), arg(2, 0));
    let spec = TaskSpec::default();
    let runs = [
        ("init_only", Mode::InitOnly, 0.0),
        ("random_aug", Mode::RandomAug, 0.0),
        ("adamab a=0", Mode::Adamab, 0.0),
        ("adamab a=30", Mode::Adamab, 30.0),
        ("adamab a=100", Mode::Adamab, 100.0),
    ];
    for (name, mode, alpha) in runs {
        let accs: Vec<f64> = (first..first + seeds).map(|s| final_accuracy(spec, s, mode, alpha)).collect();
        println!("{name:>14}: median {:.4}", median(accs));
    }
}
