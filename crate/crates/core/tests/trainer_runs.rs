use embedcal::bandit::snapshot_gradients;
use embedcal::calibrator::{CalibratorPair, ClassId};
use embedcal::providers::{GaussianOracle, GenerationRequest, Generator, PoolReplay};
use embedcal::records::{ClassRef, EmbeddingRecord};
use embedcal::task::{SyntheticTask, TaskSpec};
use embedcal::trainer::{evaluate, Mode, RoundLog, TrainConfig, Trainer};
use embedcal::{seeds, Error, Result};

fn spec() -> TaskSpec {
    TaskSpec {
        num_classes: 4,
        dim: 8,
        init_per_class: 3,
        test_per_class: 25,
        ..TaskSpec::default()
    }
}

fn config(mode: Mode, seed: u64) -> TrainConfig {
    TrainConfig {
        rounds: 12,
        aug_rounds: 8,
        delta_n: 3,
        batch_size: 8,
        mode,
        seed,
        ..TrainConfig::default()
    }
}

fn trainer_with(cfg: TrainConfig, gen: Box<dyn Generator>) -> Trainer {
    let task = SyntheticTask::generate(spec(), cfg.seed).unwrap();
    Trainer::new(cfg, task.labels, task.train, gen, task.test).unwrap()
}

fn trainer(cfg: TrainConfig) -> Trainer {
    let task = SyntheticTask::generate(spec(), cfg.seed).unwrap();
    let gen = Box::new(task.oracle());
    Trainer::new(cfg, task.labels, task.train, gen, task.test).unwrap()
}

fn collect(tr: &mut Trainer) -> Vec<RoundLog> {
    let mut logs = Vec::new();
    tr.run(None, |l| {
        logs.push(l.clone());
        Ok(())
    })
    .unwrap();
    logs
}

#[test]
fn seeded_runs_replay_exactly() {
    let a = collect(&mut trainer(config(Mode::Adamab, 3)));
    let b = collect(&mut trainer(config(Mode::Adamab, 3)));
    assert_eq!(a, b);
    let picks: Vec<_> = a.iter().filter_map(|l| l.chosen_class).collect();
    assert_eq!(picks.len(), 8);
}

#[test]
fn logged_reports_replay_the_selection() {
    for l in collect(&mut trainer(config(Mode::Adamab, 5))) {
        match (&l.acquisition, l.chosen_class) {
            (Some(r), Some(c)) => {
                assert_eq!(r.replay_choice(), c);
                assert_eq!(r.classes.len(), 4);
                assert_eq!(r.total + 3, l.n);
            }
            (None, None) => assert!(l.round > 8),
            other => panic!("round {}: {other:?}", l.round),
        }
    }
}

#[test]
fn acquisition_uses_start_of_round_state() {
    let mut tr = trainer(config(Mode::Adamab, 8));
    for _ in 0..4 {
        let pair = tr.pair().clone();
        let ds = tr.dataset().clone();
        let snap = snapshot_gradients(&pair, &ds, tr.labels()).unwrap();
        let expected = snap.shifting_estimates(3);
        let log = tr.step().unwrap();
        let got: Vec<f64> = log.acquisition.unwrap().classes.iter().map(|c| c.shifting).collect();
        assert_eq!(got, expected);
    }
}

#[test]
fn random_baseline_spends_the_same_budget() {
    for mode in [Mode::Adamab, Mode::RandomAug] {
        let mut tr = trainer(config(mode, 2));
        let logs = collect(&mut tr);
        assert_eq!(tr.generator().produced(), 24);
        assert_eq!(tr.dataset().synthetic_count(), 24);
        assert_eq!(logs.last().unwrap().n, 12 + 24);
    }
}

#[test]
fn zero_init_accuracy_is_raw_baseline() {
    let task = SyntheticTask::generate(spec(), 1).unwrap();
    let pair = CalibratorPair::new(8, &mut seeds::stream(1, "x", &[]));
    let ev = evaluate(&pair, &task.test, &task.labels).unwrap();
    let raw = task
        .test
        .iter()
        .filter(|(e, y)| {
            let scores: Vec<f64> =
                task.labels.iter().map(|l| l.embedding.iter().zip(e).map(|(a, b)| a * b).sum()).collect();
            let best = (0..scores.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
            ClassId::from_index(best) == *y
        })
        .count();
    assert_eq!(ev.correct, raw);
}

#[test]
fn evaluation_matches_recount() {
    let task = SyntheticTask::generate(TaskSpec { test_per_class: 10, num_classes: 5, ..spec() }, 6).unwrap();
    let mut tr = Trainer::new(
        config(Mode::RandomAug, 6),
        task.labels.clone(),
        task.train,
        Box::new(GaussianOracle::new(task.means.clone(), 1.0, 6).unwrap()),
        task.test.clone(),
    )
    .unwrap();
    collect(&mut tr);
    let ev = tr.final_evaluation().unwrap();
    assert_eq!(ev.total, 50);
    let recount = task
        .test
        .iter()
        .filter(|(e, y)| tr.pair().predict(e, &task.labels).unwrap() == *y)
        .count();
    assert_eq!(ev.correct, recount);
    assert_eq!(ev.confusion.iter().flatten().sum::<usize>(), 50);
    let diag: usize = (0..5).map(|i| ev.confusion[i][i]).sum();
    assert_eq!(diag, recount);
}

#[test]
fn full_batch_steps_descend_on_a_fixed_set() {
    let cfg = TrainConfig { mode: Mode::InitOnly, aug_rounds: 0, full_batch: true, lr: 1e-3, rounds: 10, ..config(Mode::InitOnly, 4) };
    let mut tr = trainer(cfg);
    let logs = collect(&mut tr);
    let losses: Vec<f64> = logs.iter().map(|l| l.train_loss).collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

/// Oracle that fails with a provider error on one chosen call.
struct Flaky {
    inner: GaussianOracle,
    fail_on: Option<usize>,
    calls: usize,
}

impl Generator for Flaky {
    fn generate(&mut self, request: GenerationRequest) -> Result<Vec<Vec<f64>>> {
        self.calls += 1;
        if Some(self.calls) == self.fail_on {
            return Err(Error::Remote("simulated outage".into()));
        }
        self.inner.generate(request)
    }

    fn produced(&self) -> usize {
        self.inner.produced()
    }

    fn fast_forward(&mut self, class: ClassId, count: usize) -> Result<()> {
        self.inner.fast_forward(class, count)
    }
}

#[test]
fn aborted_run_resumes_to_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(Mode::Adamab, 9);
    let reference = collect(&mut trainer(cfg.clone()));

    let task = SyntheticTask::generate(spec(), 9).unwrap();
    let flaky = Flaky { inner: task.oracle(), fail_on: Some(5), calls: 0 };
    let mut tr = trainer_with(cfg, Box::new(flaky));
    let mut logs = Vec::new();
    let err = tr
        .run(Some(dir.path()), |l| {
            logs.push(l.clone());
            Ok(())
        })
        .unwrap_err();
    assert!(matches!(err, Error::Aborted { round: 5, .. }), "{err}");
    assert!(err.is_provider_failure());
    assert_eq!(logs.len(), 4);

    let fresh = Flaky { inner: task.oracle(), fail_on: None, calls: 0 };
    let mut resumed = Trainer::resume(dir.path(), task.labels.clone(), Box::new(fresh), task.test.clone()).unwrap();
    assert_eq!(resumed.next_round(), 5);
    resumed
        .run(None, |l| {
            logs.push(l.clone());
            Ok(())
        })
        .unwrap();
    let a: Vec<String> = reference.iter().map(|l| serde_json::to_string(l).unwrap()).collect();
    let b: Vec<String> = logs.iter().map(|l| serde_json::to_string(l).unwrap()).collect();
    assert_eq!(a, b);
}

#[test]
fn pool_replay_never_repeats_and_exhaustion_aborts() {
    let task = SyntheticTask::generate(spec(), 12).unwrap();
    let oracle = task.oracle();
    let mut rng = seeds::stream(12, "pool", &[]);
    let mut records = Vec::new();
    for c in 0..4 {
        for v in oracle.draw(ClassId::from_index(c), 6, &mut rng) {
            records.push(EmbeddingRecord {
                id: Some(1000 + records.len() as u64),
                class: ClassRef::Id(c + 1),
                vector: Some(v),
                text: None,
                origin: None,
                round: None,
            });
        }
    }
    let pool = PoolReplay::from_records(&records, &task.labels).unwrap();
    // 8 rounds × 3 = 24 samples, exactly the pool size if perfectly balanced
    let mut tr = Trainer::new(config(Mode::Adamab, 12), task.labels.clone(), task.train.clone(), Box::new(pool), task.test.clone()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let result = tr.run(Some(dir.path()), |_| Ok(()));
    let synth: Vec<&[f64]> = tr
        .dataset()
        .samples()
        .iter()
        .filter(|s| s.origin != embedcal::dataset::Origin::Initial)
        .map(|s| s.embedding.as_slice())
        .collect();
    for (i, a) in synth.iter().enumerate() {
        assert!(synth[..i].iter().all(|b| b != a), "sample {i} repeated");
    }
    match result {
        Ok(()) => assert_eq!(synth.len(), 24),
        Err(Error::Aborted { source, .. }) => {
            assert!(matches!(*source, Error::PoolExhausted { .. }));
            assert!(dir.path().join("state.json").exists());
        }
        Err(e) => panic!("{e}"),
    }

    let small = PoolReplay::from_records(&records[..4], &task.labels).unwrap();
    let mut tr = Trainer::new(config(Mode::RandomAug, 12), task.labels, task.train, Box::new(small), task.test).unwrap();
    let err = tr.run(Some(dir.path()), |_| Ok(())).unwrap_err();
    let Error::Aborted { source, .. } = err else { panic!("{err}") };
    assert!(matches!(*source, Error::PoolExhausted { .. }));
}
