//! Training loop, optimizer, checkpointing and learning curves.

pub mod checkpoint;
pub mod curve;
pub mod optim;
pub mod run;

pub use checkpoint::Checkpoint;
pub use curve::{EpochRecord, LearningCurve};
pub use optim::{clip_global_norm, Adam};
pub use run::{
    evaluate_checkpoint, evaluate_model, static_loss, train_run, train_run_from, TrainConfig,
    TrainMode, TrainResult,
};
