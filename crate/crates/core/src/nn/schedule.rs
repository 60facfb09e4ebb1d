use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cosine annealing from `initial` at `t = 0` down to `final_lr` at `t = total`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    initial: f64,
    final_lr: f64,
    total: usize,
}

impl CosineSchedule {
    pub fn new(initial: f64, final_lr: f64, total: usize) -> Result<Self> {
        if !(final_lr > 0.0 && final_lr <= initial && initial.is_finite()) {
            return Err(Error::Config(format!(
                "cosine schedule needs 0 < final ({final_lr}) <= initial ({initial})"
            )));
        }
        Ok(Self {
            initial,
            final_lr,
            total,
        })
    }

    /// Schedule whose final rate is `ratio · initial`.
    pub fn with_ratio(initial: f64, ratio: f64, total: usize) -> Result<Self> {
        Self::new(initial, initial * ratio, total)
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn final_lr(&self) -> f64 {
        self.final_lr
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Indices past the horizon clamp to the final rate.
    pub fn lr_at(&self, t: usize) -> f64 {
        if self.total == 0 || t >= self.total {
            return if self.total == 0 && t == 0 { self.initial } else { self.final_lr };
        }
        let phase = std::f64::consts::PI * t as f64 / self.total as f64;
        self.final_lr + 0.5 * (self.initial - self.final_lr) * (1.0 + phase.cos())
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn endpoints() {
        let s = CosineSchedule::with_ratio(0.005, 0.5, 30).unwrap();
        assert_eq!(s.lr_at(0), 0.005);
        assert_eq!(s.lr_at(30), 0.0025);
        assert_eq!(s.lr_at(31), 0.0025);
    }

    #[test]
    fn midpoint() {
        let s = CosineSchedule::with_ratio(0.005, 0.5, 30).unwrap();
        assert!((s.lr_at(15) - 0.00375).abs() < 1e-15);
    }

    #[test]
    fn rejects_inverted_bounds() {
        assert!(CosineSchedule::new(0.001, 0.01, 10).is_err());
        assert!(CosineSchedule::new(0.001, 0.0, 10).is_err());
    }

    proptest! {
        #[test]
        fn monotone_and_bounded(initial in 1e-5f64..1.0, ratio in 0.01f64..1.0, total in 1usize..500) {
            let s = CosineSchedule::with_ratio(initial, ratio, total).unwrap();
            let mut prev = f64::INFINITY;
            for t in 0..=total {
                let lr = s.lr_at(t);
                prop_assert!(lr <= prev);
                prop_assert!(lr >= s.final_lr() * (1.0 - 1e-12) && lr <= initial * (1.0 + 1e-12));
                prev = lr;
            }
        }
    }
}
