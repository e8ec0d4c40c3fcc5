//! Optimizers, learning-rate schedules and the training loop.

mod optimizer;
mod schedule;
mod train;

pub use optimizer::{adam_step, sgd_step, AdamConfig, OptimizerKind, OptimizerState};
pub use schedule::LrSchedule;
pub use train::{evaluate, predict, train, EpochRecord, TrainConfig, TrainingHistory};
