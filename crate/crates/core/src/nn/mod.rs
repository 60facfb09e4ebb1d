//! Dense feed-forward networks with explicit forward/backward passes, Adam and a
//! cosine learning-rate schedule.

mod adam;
pub mod checkpoint;
mod layer;
mod mlp;
mod schedule;

pub use adam::{AdamConfig, AdamState};
pub use layer::DenseLayer;
pub use mlp::{Activation, MlpGradient, MlpNetwork, Tape};
pub use schedule::CosineSchedule;
