//! Monte Carlo check of the vector Hoeffding bound.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::parallel_map;
use crate::error::{Error, Result};
use crate::seeds;

/// Coordinate distribution on `[-G, G]`, each with mean zero unless constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundedDistribution {
    Uniform,
    Rademacher,
    /// Every draw is the vector `(G, …, G)`.
    Constant,
}

impl std::str::FromStr for BoundedDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "rademacher" => Ok(Self::Rademacher),
            "constant" => Ok(Self::Constant),
            _ => Err(Error::Config(format!("unknown distribution {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingSetup {
    pub dim: usize,
    pub bound: f64,
    pub n: usize,
    pub horizon: usize,
    pub trials: usize,
    pub distribution: BoundedDistribution,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingReport {
    pub epsilon: f64,
    /// `1/T⁴`.
    pub target: f64,
    pub violations: usize,
    pub trials: usize,
    pub rate: f64,
    pub std_error: f64,
}

impl HoeffdingReport {
    pub fn passes(&self) -> bool {
        self.rate <= self.target + 3.0 * self.std_error
    }
}

/// Deviation radius `sqrt(2 d G² log(2 T⁴ d) / n)`.
pub fn epsilon(dim: usize, bound: f64, n: usize, horizon: usize) -> f64 {
    let d = dim as f64;
    let t4 = (horizon as f64).powi(4);
    (2.0 * d * bound * bound * (2.0 * t4 * d).ln() / n as f64).sqrt()
}

/// Scalar Hoeffding tail `2 exp(−n ε² / (2 G²))` for variables in `[-G, G]`.
pub fn scalar_tail(bound: f64, n: usize, eps: f64) -> f64 {
    2.0 * (-(n as f64) * eps * eps / (2.0 * bound * bound)).exp()
}

const CHUNK: usize = 1024;

/// Fraction of trials where `‖mean − E‖₂ ≥ ε`.
pub fn hoeffding_trial(setup: &HoeffdingSetup) -> Result<HoeffdingReport> {
    let HoeffdingSetup { dim, bound, n, horizon, trials, distribution, seed } = *setup;
    if dim == 0 || n == 0 || horizon == 0 || trials == 0 {
        return Err(Error::Config("dim, n, horizon and trials must all be >= 1".into()));
    }
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::Config(format!("bound must be positive, got {bound}")));
    }
    let eps = epsilon(dim, bound, n, horizon);
    let expected = match distribution {
        BoundedDistribution::Constant => bound,
        _ => 0.0,
    };
    let chunks: Vec<usize> = (0..trials.div_ceil(CHUNK)).collect();
    let counts = parallel_map(&chunks, |&c| {
        let mut rng = seeds::stream(seed, "hoeffding", &[c as u64]);
        let len = CHUNK.min(trials - c * CHUNK);
        let mut mean = vec![0.0; dim];
        let mut hits = 0usize;
        for _ in 0..len {
            mean.iter_mut().for_each(|m| *m = 0.0);
            for _ in 0..n {
                for m in mean.iter_mut() {
                    *m += match distribution {
                        BoundedDistribution::Uniform => rng.random_range(-bound..=bound),
                        BoundedDistribution::Rademacher => {
                            if rng.random::<bool>() {
                                bound
                            } else {
                                -bound
                            }
                        }
                        BoundedDistribution::Constant => bound,
                    };
                }
            }
            let dist2: f64 = mean.iter().map(|m| (m / n as f64 - expected).powi(2)).sum();
            hits += usize::from(dist2.sqrt() >= eps);
        }
        hits
    });
    let violations: usize = counts.iter().sum();
    let rate = violations as f64 / trials as f64;
    let target = (horizon as f64).powi(-4);
    Ok(HoeffdingReport {
        epsilon: eps,
        target,
        violations,
        trials,
        rate,
        std_error: (target * (1.0 - target) / trials as f64).sqrt(),
    })
}
