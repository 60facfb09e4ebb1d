//! Numerical experiments behind the convergence analysis: the vector
//! Hoeffding bound, biased gradient descent, and regret of the acquisition
//! policy.

mod hoeffding;
mod regret;
mod theorem1;

pub use hoeffding::{epsilon, hoeffding_trial, scalar_tail, BoundedDistribution, HoeffdingReport, HoeffdingSetup};
pub use regret::{
    adversarial_counts, log_log_slope, regret_sim, AdversarialInstance, BanditSimProblem, CountTrace, RegretReport,
    RegretSetup,
};
pub use theorem1::{biased_gd_trace, BiasSchedule, GdTrace, GdTraceRow, QuadraticProblem};

/// Maps `f` over `items` on scoped worker threads; output order matches input.
pub(crate) fn parallel_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let per = items.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(per)
            .map(|chunk| scope.spawn(|| chunk.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}
