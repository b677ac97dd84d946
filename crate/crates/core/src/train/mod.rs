//! Teacher pretraining and student distillation.

mod config;
mod optim;
mod run;

pub use config::{OptimizerKind, TrainConfig, FULL_SCALE_EPOCHS};
pub use optim::{sgd_step, Optimizer};
pub use run::{
    distill_student, evaluate_loss, load_network, pretrain_teacher, train_baseline, EpochRecord, RunOptions,
    RunRecord,
};
