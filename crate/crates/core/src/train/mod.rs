//! Training loop, evaluation, log and checkpoint format.

pub mod checkpoint;
pub mod log;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, AdamSnapshot, Checkpoint, NamedArray};
pub use log::{EpochRow, TrainLog};
pub use trainer::{evaluate, evaluate_model, train, train_with, EvalOptions, Evaluation, TrainConfig, TrainOutcome};
