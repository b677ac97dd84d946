use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::a2d::A2DConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Band-split feature matching.
    MseFeature,
    /// Activation-boundary hinge.
    Ab,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tap {
    Output,
    Latent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillMode {
    Single,
    AverMkd,
    Aekd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillPlan {
    /// Weight of the distillation term against the task loss.
    pub lambda: f64,
    /// Weight of the low band inside the feature loss.
    pub alpha_kd: f64,
    pub loss_variant: LossVariant,
    pub tap: Tap,
    /// Radial cutoff in integer wavenumber units; `None` picks
    /// `floor(min(h, w) / 8)` for the tapped grid.
    pub cutoff: Option<f64>,
    /// Hinge margin for [`LossVariant::Ab`].
    pub margin: f64,
    pub mode: DistillMode,
    /// Teacher checkpoint directories.
    pub teachers: Vec<PathBuf>,
    pub a2d: A2DConfig,
    /// Apply `theta -= lr * sum_m alpha_m g_m` directly instead of feeding
    /// the combined gradient to the run's optimizer.
    pub literal_sgd: bool,
}

impl Default for DistillPlan {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            alpha_kd: 1.0,
            loss_variant: LossVariant::MseFeature,
            tap: Tap::Output,
            cutoff: None,
            margin: 1.0,
            mode: DistillMode::Single,
            teachers: Vec::new(),
            a2d: A2DConfig::default(),
            literal_sgd: false,
        }
    }
}

impl DistillPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.alpha_kd >= 0.0) || !(self.margin >= 0.0) {
            return Err(Error::Config("lambda, alpha_kd and margin must be non-negative".into()));
        }
        let m = self.teachers.len();
        match self.mode {
            DistillMode::Single if m != 1 => {
                return Err(Error::Config(format!("single-teacher distillation needs exactly one teacher, got {m}")))
            }
            DistillMode::AverMkd if m < 2 => {
                return Err(Error::Config(format!("averaged distillation needs at least two teachers, got {m}")))
            }
            DistillMode::Aekd if m < 1 => return Err(Error::Config("adaptive distillation needs a teacher".into())),
            DistillMode::Aekd => self.a2d.validate(m)?,
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(mode: DistillMode, m: usize) -> DistillPlan {
        DistillPlan {
            mode,
            teachers: (0..m).map(|i| PathBuf::from(format!("t{i}"))).collect(),
            ..DistillPlan::default()
        }
    }

    #[test]
    fn teacher_counts_per_mode() {
        assert!(plan(DistillMode::Single, 1).validate().is_ok());
        assert!(plan(DistillMode::Single, 2).validate().is_err());
        assert!(plan(DistillMode::AverMkd, 1).validate().is_err());
        assert!(plan(DistillMode::AverMkd, 2).validate().is_ok());
        assert!(plan(DistillMode::Aekd, 0).validate().is_err());
        // Default cap 0.7 makes a single adaptive teacher infeasible.
        assert!(plan(DistillMode::Aekd, 1).validate().is_err());
        assert!(plan(DistillMode::Aekd, 2).validate().is_ok());
    }

    #[test]
    fn plan_round_trips_through_toml() {
        let p = plan(DistillMode::Aekd, 3);
        let text = toml::to_string(&p).unwrap();
        let back: DistillPlan = toml::from_str(&text).unwrap();
        assert_eq!(back, p);
        let partial: DistillPlan = toml::from_str("lambda = 0.5\nmode = \"aver_mkd\"").unwrap();
        assert_eq!(partial.lambda, 0.5);
        assert_eq!(partial.alpha_kd, 1.0);
    }
}
