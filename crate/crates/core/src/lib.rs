//! Residual embedding calibrators trained with bandit-driven class
//! augmentation, plus numerical checks of the underlying convergence theory.

pub mod bandit;
pub mod calibrator;
pub mod dataset;
pub mod error;
pub mod nn;
pub mod providers;
pub mod records;
pub mod seeds;
pub mod task;
pub mod theorylab;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/calibrators.md")]
    mod calibrators {}
    #[doc = include_str!("../../../book/src/acquisition.md")]
    mod acquisition {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/providers.md")]
    mod providers {}
    #[doc = include_str!("../../../book/src/theory.md")]
    mod theory {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
}
