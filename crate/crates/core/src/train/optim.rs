use indexmap::IndexMap;

use super::config::{OptimizerKind, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::ParameterSet;

/// First-order optimizer over a [`ParameterSet`].
#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: ParameterSet,
        v: ParameterSet,
        t: u64,
    },
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, params: &ParameterSet) -> Self {
        match cfg.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam {
                beta1: cfg.beta1,
                beta2: cfg.beta2,
                eps: cfg.eps,
                m: params.zeros_like(),
                v: params.zeros_like(),
                t: 0,
            },
        }
    }

    /// One update `params <- params - lr * step(grads)`.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &ParameterSet, lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        match self {
            Optimizer::Sgd => sgd_step(params, grads, lr),
            Optimizer::Adam {
                beta1,
                beta2,
                eps,
                m,
                v,
                t,
            } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t as i32);
                let c2 = 1.0 - beta2.powi(*t as i32);
                for ((name, p), ((_, m), (_, v))) in params.iter_mut().zip(m.iter_mut().zip(v.iter_mut())) {
                    let g = grads
                        .get(name)
                        .ok_or_else(|| Error::Shape(format!("no gradient for {name}")))?;
                    p.expect_same_shape(g)?;
                    let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
                    for i in 0..p.len() {
                        let gi = g.data()[i];
                        m[i] = *beta1 * m[i] + (1.0 - *beta1) * gi;
                        v[i] = *beta2 * v[i] + (1.0 - *beta2) * gi * gi;
                        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + *eps);
                    }
                }
                Ok(())
            }
        }
    }

    /// Step count and moment buffers, for checkpointing.
    pub fn state(&self) -> (u64, IndexMap<String, ParameterSet>) {
        let mut groups = IndexMap::new();
        match self {
            Optimizer::Sgd => (0, groups),
            Optimizer::Adam { m, v, t, .. } => {
                groups.insert("adam.m".to_string(), m.clone());
                groups.insert("adam.v".to_string(), v.clone());
                (*t, groups)
            }
        }
    }

    pub fn restore(&mut self, step: u64, groups: &IndexMap<String, ParameterSet>) -> Result<()> {
        if let Optimizer::Adam { m, v, t, .. } = self {
            let (Some(gm), Some(gv)) = (groups.get("adam.m"), groups.get("adam.v")) else {
                return Err(Error::Checkpoint("optimizer moments missing".into()));
            };
            let same = |a: &ParameterSet, b: &ParameterSet| {
                a.len() == b.len() && a.iter().all(|(k, t)| b.get(k).is_some_and(|u| u.shape() == t.shape()))
            };
            if !same(m, gm) || !same(v, gv) {
                return Err(Error::Checkpoint("optimizer moments do not match the parameters".into()));
            }
            *m = gm.clone();
            *v = gv.clone();
            *t = step;
        }
        Ok(())
    }
}

/// `params <- params - lr * grads`.
pub fn sgd_step(params: &mut ParameterSet, grads: &ParameterSet, lr: f64) -> Result<()> {
    for (name, p) in params.iter_mut() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Shape(format!("no gradient for {name}")))?;
        p.expect_same_shape(g)?;
        for (pi, gi) in p.data_mut().iter_mut().zip(g.data()) {
            *pi -= lr * gi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(v: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("x", Tensor::from_vec(&[1], vec![v]).unwrap());
        p
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let cfg = TrainConfig::default();
        let mut p = single(1.0);
        let mut opt = Optimizer::new(&cfg, &p);
        opt.step(&mut p, &single(0.3), 0.01).unwrap();
        // Bias correction makes the first step lr * g / (|g| + eps).
        let want = 1.0 - 0.01 * 0.3 / (0.3 + 1e-8);
        assert!((p.get("x").unwrap().data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let cfg = TrainConfig::default();
        let mut p = single(3.0);
        let mut opt = Optimizer::new(&cfg, &p);
        for _ in 0..2000 {
            let x = p.get("x").unwrap().data()[0];
            opt.step(&mut p, &single(2.0 * (x - 0.5)), 0.01).unwrap();
        }
        assert!((p.get("x").unwrap().data()[0] - 0.5).abs() < 1e-2);
    }

    #[test]
    fn sgd_and_state_round_trip() {
        let mut p = single(1.0);
        sgd_step(&mut p, &single(2.0), 0.25).unwrap();
        assert_eq!(p.get("x").unwrap().data()[0], 0.5);

        let cfg = TrainConfig::default();
        let mut opt = Optimizer::new(&cfg, &p);
        opt.step(&mut p, &single(1.0), 0.1).unwrap();
        let (t, groups) = opt.state();
        let mut fresh = Optimizer::new(&cfg, &p);
        fresh.restore(t, &groups).unwrap();
        assert_eq!(fresh, opt);
    }
}
