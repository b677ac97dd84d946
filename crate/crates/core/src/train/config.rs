use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub early_stop_patience: usize,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Teacher only: update the conv branches on even steps and the
    /// attention branches on odd steps instead of both jointly.
    pub alternate_branches: bool,
    /// Write the best and last checkpoints every this many epochs; `0`
    /// writes them only when the run ends. Runs always write on exit.
    pub checkpoint_every: usize,
}

/// Epoch budget for full-scale runs; the default is a
/// desk-scale budget.
pub const FULL_SCALE_EPOCHS: usize = 300;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 1e-4,
            batch_size: 8,
            seed: 42,
            early_stop_patience: 20,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            alternate_branches: false,
            checkpoint_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.early_stop_patience >= self.epochs {
            return Err(Error::Config(format!(
                "early_stop_patience {} must be below epochs {}",
                self.early_stop_patience, self.epochs
            )));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("adam betas must lie in [0, 1) and eps be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!((c.lr, c.seed, c.batch_size), (1e-4, 42, 8));
    }

    #[test]
    fn patience_must_be_below_epochs() {
        let c = TrainConfig { epochs: 5, early_stop_patience: 5, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        let c = TrainConfig { lr: 0.0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
    }
}
