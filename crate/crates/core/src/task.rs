//! Seeded Gaussian classification tasks with a known generating distribution.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::calibrator::{ClassId, Label, LabelSet};
use crate::dataset::ClassDataset;
use crate::error::{Error, Result};
use crate::providers::GaussianOracle;
use crate::seeds;

/// Shape of a synthetic task.
///
/// Class means are `shared + separation·u_C` with `u_C` standard normal, so
/// classes overlap through the common component. Label embeddings are the
/// means seen through a random linear distortion plus noise, which is what a
/// calibrator has to undo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub init_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
    pub shared: f64,
    pub sigma: f64,
    pub label_distortion: f64,
    pub label_noise: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            num_classes: 6,
            dim: 16,
            init_per_class: 5,
            test_per_class: 200,
            separation: 0.6,
            shared: 1.0,
            sigma: 1.0,
            label_distortion: 0.8,
            label_noise: 0.3,
        }
    }
}

pub type TestSet = Vec<(Vec<f64>, ClassId)>;

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub spec: TaskSpec,
    pub seed: u64,
    pub means: Vec<Vec<f64>>,
    pub labels: LabelSet,
    pub train: ClassDataset,
    pub test: TestSet,
}

fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

impl SyntheticTask {
    pub fn generate(spec: TaskSpec, seed: u64) -> Result<Self> {
        if spec.num_classes < 2 || spec.dim == 0 || spec.init_per_class == 0 {
            return Err(Error::Config(
                "task needs at least 2 classes, dim >= 1 and one initial sample per class".into(),
            ));
        }
        let (k, d) = (spec.num_classes, spec.dim);
        let mut rng = seeds::stream(seed, "task-geometry", &[]);
        let shared: Vec<f64> = gaussian_vec(&mut rng, d).into_iter().map(|x| x * spec.shared).collect();
        let means: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                gaussian_vec(&mut rng, d)
                    .iter()
                    .zip(&shared)
                    .map(|(u, s)| s + spec.separation * u)
                    .collect()
            })
            .collect();
        let scale = spec.label_distortion / (d as f64).sqrt();
        let distortion: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                gaussian_vec(&mut rng, d)
                    .into_iter()
                    .enumerate()
                    .map(|(j, z)| f64::from(u8::from(i == j)) + scale * z)
                    .collect()
            })
            .collect();
        let labels = means
            .iter()
            .enumerate()
            .map(|(c, mu)| {
                let noise = gaussian_vec(&mut rng, d);
                let embedding = (0..d)
                    .map(|i| {
                        let row: f64 = distortion[i].iter().zip(mu).map(|(a, m)| a * m).sum();
                        row + spec.label_noise * noise[i]
                    })
                    .collect();
                Label {
                    class: ClassId::from_index(c),
                    name: format!("class-{}", c + 1),
                    description: String::new(),
                    embedding,
                }
            })
            .collect();
        let labels = LabelSet::new(labels)?;

        let oracle = GaussianOracle::new(means.clone(), spec.sigma, seed)?;
        let mut train_rng = seeds::stream(seed, "task-train", &[]);
        let mut initial = Vec::with_capacity(k * spec.init_per_class);
        for c in 0..k {
            let class = ClassId::from_index(c);
            for v in oracle.draw(class, spec.init_per_class, &mut train_rng) {
                initial.push((None, v, class));
            }
        }
        let train = ClassDataset::load_initial(k, initial)?;
        let mut test_rng = seeds::stream(seed, "task-test", &[]);
        let mut test = Vec::with_capacity(k * spec.test_per_class);
        for c in 0..k {
            let class = ClassId::from_index(c);
            test.extend(oracle.draw(class, spec.test_per_class, &mut test_rng).into_iter().map(|v| (v, class)));
        }
        Ok(Self {
            spec,
            seed,
            means,
            labels,
            train,
            test,
        })
    }

    /// Generator drawing fresh samples from the task distribution.
    pub fn oracle(&self) -> GaussianOracle {
        GaussianOracle::new(self.means.clone(), self.spec.sigma, self.seed)
            .expect("task means are validated at construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_follow_spec() {
        let t = SyntheticTask::generate(TaskSpec::default(), 3).unwrap();
        assert_eq!(t.train.len(), 30);
        assert_eq!(t.train.counts(), vec![5; 6]);
        assert_eq!(t.test.len(), 1200);
        assert_eq!(t.labels.len(), 6);
        assert_eq!(t.labels.dim(), 16);
    }

    #[test]
    fn seed_fixes_everything() {
        let a = SyntheticTask::generate(TaskSpec::default(), 8).unwrap();
        let b = SyntheticTask::generate(TaskSpec::default(), 8).unwrap();
        let c = SyntheticTask::generate(TaskSpec::default(), 9).unwrap();
        assert_eq!(a.means, b.means);
        assert_eq!(a.train.samples(), b.train.samples());
        assert_eq!(a.test, b.test);
        assert_ne!(a.means, c.means);
    }
}
