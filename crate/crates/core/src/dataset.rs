//! Append-only, class-partitioned sample store.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::calibrator::{ClassId, LabelSet};
use crate::error::{check_dim, Error, Result};
use crate::records::{ClassRef, EmbeddingRecord};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Origin {
    Initial,
    Synthetic { round: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub embedding: Vec<f64>,
    pub class: ClassId,
    pub origin: Origin,
}

/// Labeled embeddings grouped by class. Samples are never removed.
#[derive(Debug, Clone)]
pub struct ClassDataset {
    samples: Vec<Sample>,
    by_class: Vec<Vec<usize>>,
    dim: usize,
    next_id: u64,
    round: usize,
}

impl ClassDataset {
    /// Builds the initial store. Every class in `1..=num_classes` needs at least
    /// one sample; class counts need not be balanced.
    pub fn load_initial(num_classes: usize, samples: Vec<(Option<u64>, Vec<f64>, ClassId)>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("dataset needs at least one class".into()));
        }
        let dim = samples
            .first()
            .map(|s| s.1.len())
            .ok_or(Error::EmptyClass(1))?;
        let mut ds = Self {
            samples: Vec::with_capacity(samples.len()),
            by_class: vec![Vec::new(); num_classes],
            dim,
            next_id: 0,
            round: 0,
        };
        let mut seen = std::collections::HashSet::new();
        let mut pending = Vec::with_capacity(samples.len());
        for (id, embedding, class) in samples {
            check_dim(dim, embedding.len())?;
            ds.check_class(class)?;
            if let Some(id) = id {
                if !seen.insert(id) {
                    return Err(Error::Config(format!("duplicate sample id {id}")));
                }
            }
            pending.push((id, embedding, class));
        }
        ds.next_id = seen.iter().max().map_or(0, |m| m + 1);
        for (id, embedding, class) in pending {
            let id = id.unwrap_or_else(|| {
                let id = ds.next_id;
                ds.next_id += 1;
                id
            });
            ds.push(Sample {
                id,
                embedding,
                class,
                origin: Origin::Initial,
            });
        }
        if let Some(c) = ds.by_class.iter().position(Vec::is_empty) {
            return Err(Error::EmptyClass(c + 1));
        }
        Ok(ds)
    }

    /// Loads from records, resolving class names against `labels` and
    /// preserving synthetic provenance when present.
    pub fn from_records(records: &[EmbeddingRecord], labels: &LabelSet) -> Result<Self> {
        let mut initial = Vec::new();
        let mut synthetic = Vec::new();
        for r in records {
            let class = r.class.resolve(Some(labels))?;
            labels.check_class(class)?;
            let vector = r
                .vector
                .clone()
                .ok_or_else(|| Error::Config("record has no vector; resolve text through an embedder first".into()))?;
            check_dim(labels.dim(), vector.len())?;
            match (r.origin.as_deref(), r.round) {
                (Some("synthetic"), Some(round)) => synthetic.push((r.id, vector, class, round)),
                (Some("synthetic"), None) => {
                    return Err(Error::Config("synthetic record without a round".into()));
                }
                _ => initial.push((r.id, vector, class)),
            }
        }
        let mut ds = Self::load_initial(labels.len(), initial)?;
        synthetic.sort_by_key(|s| (s.3, s.0));
        for (id, embedding, class, round) in synthetic {
            let id = match id {
                Some(id) if ds.samples.iter().any(|s| s.id == id) => {
                    return Err(Error::Config(format!("duplicate sample id {id}")));
                }
                Some(id) => id,
                None => ds.next_id,
            };
            ds.next_id = ds.next_id.max(id + 1);
            ds.round = ds.round.max(round);
            ds.push(Sample {
                id,
                embedding,
                class,
                origin: Origin::Synthetic { round },
            });
        }
        Ok(ds)
    }

    pub fn to_records(&self) -> Vec<EmbeddingRecord> {
        self.samples
            .iter()
            .map(|s| {
                let (origin, round) = match s.origin {
                    Origin::Initial => ("initial", None),
                    Origin::Synthetic { round } => ("synthetic", Some(round)),
                };
                EmbeddingRecord {
                    id: Some(s.id),
                    class: ClassRef::Id(s.class.0),
                    vector: Some(s.embedding.clone()),
                    text: None,
                    origin: Some(origin.into()),
                    round,
                }
            })
            .collect()
    }

    fn push(&mut self, sample: Sample) {
        self.by_class[sample.class.index()].push(self.samples.len());
        self.samples.push(sample);
    }

    fn check_class(&self, class: ClassId) -> Result<()> {
        if class.0 >= 1 && class.0 <= self.by_class.len() {
            Ok(())
        } else {
            Err(Error::InvalidClass {
                class: class.0,
                num_classes: self.by_class.len(),
            })
        }
    }

    /// Appends `embeddings` to `class` as samples generated in `round`.
    pub fn augment(&mut self, class: ClassId, embeddings: Vec<Vec<f64>>, round: usize) -> Result<Vec<u64>> {
        self.check_class(class)?;
        for e in &embeddings {
            check_dim(self.dim, e.len())?;
        }
        let mut ids = Vec::with_capacity(embeddings.len());
        for embedding in embeddings {
            let id = self.next_id;
            self.next_id += 1;
            self.push(Sample {
                id,
                embedding,
                class,
                origin: Origin::Synthetic { round },
            });
            ids.push(id);
        }
        self.round = self.round.max(round);
        Ok(ids)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.by_class.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Latest augmentation round recorded in the store.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn count(&self, class: ClassId) -> usize {
        self.by_class[class.index()].len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.by_class.iter().map(Vec::len).collect()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn class_samples(&self, class: ClassId) -> impl Iterator<Item = &Sample> {
        self.by_class[class.index()].iter().map(move |&i| &self.samples[i])
    }

    /// Samples in insertion order, addressable by position.
    pub fn sample_at(&self, position: usize) -> &Sample {
        &self.samples[position]
    }

    pub fn synthetic_count(&self) -> usize {
        self.samples
            .iter()
            .filter(|s| matches!(s.origin, Origin::Synthetic { .. }))
            .count()
    }

    /// `max_C n_C / min_C n_C`.
    pub fn max_count_ratio(&self) -> f64 {
        let counts = self.counts();
        let max = *counts.iter().max().unwrap_or(&0) as f64;
        let min = *counts.iter().min().unwrap_or(&0) as f64;
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    /// Seeded permutation of the current sample positions, chunked into
    /// batches. The same `(seed, epoch, len)` always yields the same batches.
    pub fn minibatches(&self, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
        let batch_size = batch_size.max(1);
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        let mut rng = seeds::stream(seed, "minibatch", &[epoch]);
        order.shuffle(&mut rng);
        order.chunks(batch_size).map(<[usize]>::to_vec).collect()
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn balanced(k: usize, per: usize, d: usize) -> ClassDataset {
        let samples = (0..k * per)
            .map(|i| (None, vec![i as f64; d], ClassId(i % k + 1)))
            .collect();
        ClassDataset::load_initial(k, samples).unwrap()
    }

    #[test]
    fn multiwd_shape() {
        let ds = balanced(6, 5, 4);
        assert_eq!(ds.len(), 30);
        assert_eq!(ds.counts(), vec![5; 6]);
    }

    #[test]
    fn oxford_pets_shape() {
        let ds = balanced(37, 3, 4);
        assert_eq!(ds.len(), 111);
        assert!(ds.counts().iter().all(|&c| c == 3));
    }

    #[test]
    fn missing_class_is_named() {
        let samples = vec![(None, vec![0.0], ClassId(1)), (None, vec![1.0], ClassId(1))];
        assert!(matches!(ClassDataset::load_initial(2, samples), Err(Error::EmptyClass(2))));
    }

    #[test]
    fn dim_mismatch_rejected() {
        let samples = vec![(None, vec![0.0, 1.0], ClassId(1)), (None, vec![1.0], ClassId(2))];
        assert!(matches!(
            ClassDataset::load_initial(2, samples),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn augment_updates_counts() {
        let mut ds = balanced(6, 5, 2);
        ds.augment(ClassId(2), vec![vec![0.0; 2]; 5], 1).unwrap();
        assert_eq!(ds.count(ClassId(2)), 10);
        assert_eq!(ds.len(), 35);
        ds.augment(ClassId(3), vec![], 2).unwrap();
        assert_eq!(ds.len(), 35);
        assert!(matches!(
            ds.augment(ClassId(7), vec![vec![0.0; 2]], 3),
            Err(Error::InvalidClass { class: 7, .. })
        ));
    }

    #[test]
    fn augment_matches_event_log_replay() {
        let mut ds = balanced(3, 2, 2);
        let n0 = ds.len();
        let events = [(ClassId(2), 2usize), (ClassId(1), 2), (ClassId(2), 2)];
        for (t, &(c, dn)) in events.iter().enumerate() {
            ds.augment(c, vec![vec![1.0; 2]; dn], t + 1).unwrap();
        }
        let mut replay = vec![2usize; 3];
        for &(c, dn) in &events {
            replay[c.index()] += dn;
        }
        assert_eq!(ds.len(), n0 + 6);
        assert_eq!(ds.counts(), replay);
        assert_eq!(ds.synthetic_count(), 6);
    }

    #[test]
    fn minibatch_chunking() {
        let ds = balanced(2, 5, 1);
        let sizes: Vec<_> = ds.minibatches(4, 1, 0).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(ds.minibatches(50, 1, 0).len(), 1);
        assert_eq!(ds.minibatches(4, 9, 3), ds.minibatches(4, 9, 3));
        assert_ne!(ds.minibatches(10, 9, 3), ds.minibatches(10, 9, 4));
    }

    #[test]
    fn records_round_trip() {
        let labels = LabelSet::from_embeddings(vec![vec![0.0; 2]; 2]).unwrap();
        let mut ds = balanced(2, 2, 2);
        ds.augment(ClassId(1), vec![vec![0.5, 0.25]], 3).unwrap();
        let back = ClassDataset::from_records(&ds.to_records(), &labels).unwrap();
        assert_eq!(back.samples(), ds.samples());
        assert_eq!(back.round(), 3);
    }

    proptest! {
        #[test]
        fn count_conservation(events in prop::collection::vec((1usize..=4, 0usize..6), 0..40)) {
            let mut ds = balanced(4, 1, 2);
            let n0 = ds.len();
            let mut total = 0;
            let mut ids_before: Vec<u64> = Vec::new();
            for (t, (c, dn)) in events.into_iter().enumerate() {
                ds.augment(ClassId(c), vec![vec![0.0; 2]; dn], t + 1).unwrap();
                total += dn;
                prop_assert_eq!(ds.len(), n0 + total);
                prop_assert_eq!(ds.counts().iter().sum::<usize>(), ds.len());
                let ids: Vec<u64> = ds.samples().iter().map(|s| s.id).collect();
                prop_assert!(ids_before.iter().all(|id| ids.contains(id)));
                ids_before = ids;
            }
        }
    }
}
