//! Distillation losses and multi-teacher gradient weighting.

pub mod a2d;
pub mod losses;
pub mod plan;

pub use a2d::{
    a2d_objective, a2d_step, gram, project_capped_simplex, solve_a2d_weights, solve_gram, A2DConfig, A2DStep,
    DiagnosticsWriter, GradientBundle,
};
pub use losses::{ab_loss, aver_mkd_target, kd_loss, task_loss, KdLoss, LossGrad};
pub use plan::{DistillMode, DistillPlan, LossVariant, Tap};
