use approx::assert_relative_eq;
use embedcal::bandit::BonusKind;
use embedcal::seeds;
use embedcal::theorylab::{
    adversarial_counts, biased_gd_trace, regret_sim, AdversarialInstance, BanditSimProblem, BiasSchedule,
    QuadraticProblem, RegretSetup,
};
use nalgebra::DVector;
use proptest::prelude::*;

fn setup(alpha: f64, seeds: usize) -> RegretSetup {
    RegretSetup {
        alpha,
        rounds: 200,
        seeds,
        ..RegretSetup::default()
    }
}

#[test]
fn two_arm_greedy_matches_count_balancing() {
    for seed in 0..5 {
        let p = BanditSimProblem::random(2, 3, 1.0, 1.0, seed).unwrap();
        let greedy = regret_sim(&p, &setup(0.0, 8)).unwrap();
        let balanced = regret_sim(&p, &setup(100.0, 8)).unwrap();
        // at equal counts both arms shift by the same amount, so only the
        // tie-break differs and the count trajectories coincide
        assert_eq!(greedy.mean_max_ratio, balanced.mean_max_ratio);
        assert_eq!(greedy.worst_max_ratio, balanced.worst_max_ratio);
    }
}

#[test]
fn greedy_counts_drift_further_than_with_a_bonus() {
    let p = BanditSimProblem::random(6, 4, 1.0, 1.0, 1).unwrap();
    let greedy = regret_sim(&p, &setup(0.0, 20)).unwrap();
    let bonus = regret_sim(&p, &setup(100.0, 20)).unwrap();
    let last = |r: &[f64]| *r.last().unwrap();
    assert!(last(&bonus.mean_max_ratio) < 1.2, "{}", last(&bonus.mean_max_ratio));
    assert!(last(&greedy.mean_max_ratio) > 2.0 * last(&bonus.mean_max_ratio));
}

#[test]
fn adversarial_growth_separates_bonuses() {
    let inst = AdversarialInstance::default();
    let relaxed = adversarial_counts(&inst, BonusKind::Relaxed, 1000).unwrap();
    let tight = adversarial_counts(&inst, BonusKind::Tight, 1000).unwrap();
    assert!(relaxed.ratios.iter().all(|&r| r <= 4.0 + 1e-12));
    assert!(tight.ratios[999] > 500.0);
    assert_eq!(relaxed.counts.iter().sum::<usize>(), 2 + 1000);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn biased_gd_bound_holds(dim in 1usize..=16, rank_frac in 0.1f64..=1.0, eta_frac in 0.05f64..=1.0,
                             bias in 0.0f64..2.0, seed in 0u64..10_000) {
        let mut rng = seeds::stream(seed, "prop-quad", &[]);
        let rank = ((dim as f64 * rank_frac).ceil() as usize).max(1);
        let p = QuadraticProblem::random(dim, rank, &mut rng).unwrap();
        let eta = eta_frac / p.beta();
        let b = BiasSchedule::random(dim, 200, bias, &mut rng);
        let start = DVector::from_fn(dim, |i, _| (i as f64 * 0.37).sin() * 3.0);
        let trace = biased_gd_trace(&p, start.clone(), eta, &b, 200).unwrap();

        // independent recomputation of the right-hand side
        let l1 = p.loss(&start);
        let mut sum_d2 = 0.0;
        let mut min_g = f64::INFINITY;
        for row in &trace.rows {
            sum_d2 += row.bias_norm_sq;
            min_g = min_g.min(row.grad_norm_sq);
            let t = row.step as f64;
            let rhs = 2.0 * l1 / (t * eta) + sum_d2 / t;
            prop_assert!(min_g <= rhs * (1.0 + 1e-12), "step {}: {min_g} > {rhs}", row.step);
            prop_assert!(row.holds);
        }
    }
}

#[test]
fn unbiased_gd_reaches_the_minimizer_loss() {
    let mut rng = seeds::stream(3, "full-rank", &[]);
    let p = QuadraticProblem::random(5, 5, &mut rng).unwrap();
    let start = DVector::from_element(5, 2.0);
    let l1 = p.loss(&start);
    let trace = biased_gd_trace(&p, start, 1.0 / p.beta(), &BiasSchedule::None, 5000).unwrap();
    assert!(p.loss(&trace.final_point) < 1e-6 * l1);
    assert_relative_eq!(trace.rows[0].loss, l1);
    assert!(trace.all_hold());
}
