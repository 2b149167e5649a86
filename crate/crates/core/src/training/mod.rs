//! Teacher-forced optimization: warmup schedule, Adam, masked token loss,
//! and a deterministic, resumable training loop.

mod adam;
mod loss;
mod schedule;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{batch_gradient, dataset_loss, ipu_gradient, ipu_loss, reduce, token_loss, IpuGradient};
pub use schedule::LrSchedule;
pub use trainer::{
    apply_ablation, split_inputs, write_loss_csv, BestParams, LossRow, TrainConfig, TrainOutcome,
    TrainState, Trainer, TRAIN_STATE_FORMAT,
};

pub use crate::model::Ablation;
