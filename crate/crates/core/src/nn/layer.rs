use rand::Rng;

use crate::error::{check_dim, Result};

/// Fully connected layer `y = W x + b` with `W` stored row-major (`out_dim × in_dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }

    pub fn from_parts(in_dim: usize, out_dim: usize, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        check_dim(in_dim * out_dim, weights.len())?;
        check_dim(out_dim, biases.len())?;
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            biases,
        })
    }

    /// Kaiming-style uniform fan-in initialization: weights in `±sqrt(6 / fan_in)`,
    /// biases in `±1 / sqrt(fan_in)`.
    pub fn kaiming_uniform<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let fan_in = in_dim.max(1) as f64;
        let w_bound = (6.0 / fan_in).sqrt();
        let b_bound = 1.0 / fan_in.sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-w_bound..w_bound))
            .collect();
        let biases = (0..out_dim).map(|_| rng.random_range(-b_bound..b_bound)).collect();
        Self {
            in_dim,
            out_dim,
            weights,
            biases,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.biases)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }

    /// Accumulates `∂W += g xᵀ`, `∂b += g` into `grad` (weights first, then biases)
    /// and returns `Wᵀ g`.
    pub(crate) fn backprop(&self, x: &[f64], g: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (gw, gb) = grad.split_at_mut(self.weights.len());
        let mut gx = vec![0.0; self.in_dim];
        for (o, &go) in g.iter().enumerate() {
            gb[o] += go;
            if go == 0.0 {
                continue;
            }
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut gw[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += go * x[i];
                gx[i] += row[i] * go;
            }
        }
        gx
    }

    pub(crate) fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weights);
        out.extend_from_slice(&self.biases);
    }

    pub(crate) fn read_params(&mut self, src: &[f64]) {
        let (w, b) = src.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.biases.copy_from_slice(b);
    }
}
