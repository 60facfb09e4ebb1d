//! Biased gradient descent on convex quadratics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `L(w) = ½ wᵀAw − bᵀw + c` with `b = A w*` and `c` chosen so that
/// `min L = L(w*) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProblem {
    a: DMatrix<f64>,
    minimizer: DVector<f64>,
    b: DVector<f64>,
    beta: f64,
}

impl QuadraticProblem {
    pub fn new(a: DMatrix<f64>, minimizer: DVector<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() != minimizer.len() || a.nrows() == 0 {
            return Err(Error::Config("A must be square and match the minimizer".into()));
        }
        if (&a - a.transpose()).amax() > 1e-12 * a.amax().max(1.0) {
            return Err(Error::Config("A must be symmetric".into()));
        }
        let eig = SymmetricEigen::new(a.clone());
        let lo = eig.eigenvalues.min();
        let beta = eig.eigenvalues.max();
        if lo < -1e-10 * beta.abs().max(1.0) {
            return Err(Error::Config(format!("A is not positive semidefinite (eigenvalue {lo})")));
        }
        if !(beta > 0.0) {
            return Err(Error::Config("A must have a positive eigenvalue".into()));
        }
        let b = &a * &minimizer;
        Ok(Self { a, minimizer, b, beta })
    }

    /// `A = MᵀM / d` with `M` a standard normal `rank × d` matrix.
    pub fn random<R: Rng + ?Sized>(dim: usize, rank: usize, rng: &mut R) -> Result<Self> {
        let m: DMatrix<f64> = DMatrix::from_fn(rank.max(1), dim, |_, _| StandardNormal.sample(rng));
        let a = (m.transpose() * m) / dim as f64;
        let a = (&a + a.transpose()) * 0.5;
        let w: DVector<f64> = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        Self::new(a, w)
    }

    pub fn dim(&self) -> usize {
        self.minimizer.len()
    }

    /// Smoothness constant, the largest eigenvalue of `A`.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn minimizer(&self) -> &DVector<f64> {
        &self.minimizer
    }

    pub fn loss(&self, w: &DVector<f64>) -> f64 {
        let e = w - &self.minimizer;
        (0.5 * e.dot(&(&self.a * &e))).max(0.0)
    }

    pub fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.a * w - &self.b
    }
}

/// Bias `δ_t u_t` added to the exact gradient at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub enum BiasSchedule {
    None,
    /// Fixed vector at every step.
    Constant(DVector<f64>),
    /// Arbitrary per-step vectors; steps past the end get no bias.
    Explicit(Vec<DVector<f64>>),
}

impl BiasSchedule {
    /// Random directions with norms drawn uniformly from `[0, max_norm]`.
    pub fn random<R: Rng + ?Sized>(dim: usize, steps: usize, max_norm: f64, rng: &mut R) -> Self {
        let v = (0..steps)
            .map(|_| {
                let u: DVector<f64> = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
                let norm = u.norm().max(f64::MIN_POSITIVE);
                u * (rng.random_range(0.0..=max_norm) / norm)
            })
            .collect();
        Self::Explicit(v)
    }

    fn at(&self, t: usize, dim: usize) -> DVector<f64> {
        match self {
            Self::None => DVector::zeros(dim),
            Self::Constant(v) => v.clone(),
            Self::Explicit(v) => v.get(t).cloned().unwrap_or_else(|| DVector::zeros(dim)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdTraceRow {
    pub step: usize,
    pub loss: f64,
    pub grad_norm_sq: f64,
    pub bias_norm_sq: f64,
    pub min_grad_norm_sq: f64,
    /// `2 L(w_1) / Σ η`.
    pub optimization_term: f64,
    /// `Σ η δ² / Σ η`.
    pub bias_term: f64,
    pub holds: bool,
}

impl GdTraceRow {
    pub fn bound(&self) -> f64 {
        self.optimization_term + self.bias_term
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdTrace {
    pub rows: Vec<GdTraceRow>,
    pub final_point: DVector<f64>,
}

impl GdTrace {
    pub fn all_hold(&self) -> bool {
        self.rows.iter().all(|r| r.holds)
    }
}

/// Runs `w_{t+1} = w_t − η (∇L(w_t) + bias_t)` for `steps` steps and checks,
/// after every step `T`, that `min_{t≤T} ‖∇L(w_t)‖² ≤ 2L(w_1)/(Tη) + Σ_t ηδ_t²/(Tη)`.
pub fn biased_gd_trace(
    problem: &QuadraticProblem,
    start: DVector<f64>,
    eta: f64,
    bias: &BiasSchedule,
    steps: usize,
) -> Result<GdTrace> {
    if start.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: start.len(),
        });
    }
    if !(eta > 0.0) || eta > 1.0 / problem.beta() {
        return Err(Error::Precondition(format!(
            "step size {eta} must lie in (0, 1/β] with β = {}",
            problem.beta()
        )));
    }
    let initial_loss = problem.loss(&start);
    let mut w = start;
    let mut rows = Vec::with_capacity(steps);
    let mut min_g = f64::INFINITY;
    let mut eta_sum = 0.0;
    let mut weighted_bias = 0.0;
    for t in 0..steps {
        let g = problem.gradient(&w);
        let b = bias.at(t, problem.dim());
        let g2 = g.norm_squared();
        let d2 = b.norm_squared();
        min_g = min_g.min(g2);
        eta_sum += eta;
        weighted_bias += eta * d2;
        let optimization_term = 2.0 * initial_loss / eta_sum;
        let bias_term = weighted_bias / eta_sum;
        rows.push(GdTraceRow {
            step: t + 1,
            loss: problem.loss(&w),
            grad_norm_sq: g2,
            bias_norm_sq: d2,
            min_grad_norm_sq: min_g,
            optimization_term,
            bias_term,
            holds: min_g <= optimization_term + bias_term,
        });
        w -= (g + b) * eta;
    }
    Ok(GdTrace { rows, final_point: w })
}
