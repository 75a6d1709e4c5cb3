//! Alternating GAN training, checkpoints and evaluation.

mod adam;
mod checkpoint;
mod config;
mod export;
mod trainer;

pub use adam::{Adam, ADAM_EPS};
pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::TrainConfig;
pub use export::{dump_attention, to_rgb8, write_png, AttentionDump};
pub use trainer::{
    eval_records, evaluate_generator, generate, split_params, train, EvalMode, StepStats, TrainObserver, TrainRun, Trainer,
};
