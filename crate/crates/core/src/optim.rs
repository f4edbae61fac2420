//! SGD with momentum, Adam, and step learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl OptimizerSpec {
    pub fn sgd(learning_rate: f64, momentum: f64) -> Self {
        OptimizerSpec {
            kind: OptimizerKind::SgdMomentum,
            learning_rate,
            momentum,
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            weight_decay: 0.0,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerSpec {
            kind: OptimizerKind::Adam,
            ..OptimizerSpec::sgd(learning_rate, default_momentum())
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("optimizer.learning_rate", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("optimizer.momentum", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("optimizer.beta", "betas must be in [0, 1)"));
        }
        if self.adam_eps <= 0.0 {
            return Err(Error::config("optimizer.adam_eps", "must be > 0"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("optimizer.weight_decay", "must be >= 0"));
        }
        Ok(())
    }
}

/// Mutable optimizer state: current learning rate, moment buffers, step count.
#[derive(Clone, Debug)]
pub struct Optimizer {
    spec: OptimizerSpec,
    learning_rate: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec, model: &Model) -> Result<Self> {
        spec.validate()?;
        let zeros: Vec<Vec<f64>> = model
            .parameters()
            .iter()
            .map(|p| vec![0.0; p.len()])
            .collect();
        let second = match spec.kind {
            OptimizerKind::Adam => zeros.clone(),
            OptimizerKind::SgdMomentum => Vec::new(),
        };
        Ok(Optimizer {
            learning_rate: spec.learning_rate,
            spec,
            first: zeros,
            second,
            step: 0,
        })
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update `θ ← θ − η·direction` with the configured rule.
    pub fn step(&mut self, model: &mut Model, gradients: &[Tensor]) -> Result<()> {
        let mut params = model.parameters_mut();
        if gradients.len() != params.len() {
            return Err(Error::dim("gradients", params.len(), gradients.len()));
        }
        for (i, (p, g)) in params.iter().zip(gradients).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::dim("gradients", (i, p.shape()), g.shape()));
            }
        }
        self.step += 1;
        let lr = self.learning_rate;
        let wd = self.spec.weight_decay;
        match self.spec.kind {
            OptimizerKind::SgdMomentum => {
                let mu = self.spec.momentum;
                for ((p, g), v) in params.iter_mut().zip(gradients).zip(&mut self.first) {
                    for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                        let d = gi + wd * *w;
                        *vi = mu * *vi + d;
                        *w -= lr * *vi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.spec.beta1, self.spec.beta2, self.spec.adam_eps);
                let t = self.step as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(gradients)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((w, &gi), mi), vi) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        let d = gi + wd * *w;
                        *mi = b1 * *mi + (1.0 - b1) * d;
                        *vi = b2 * *vi + (1.0 - b2) * d * d;
                        *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Milestone {
    /// Zero-based epoch index from which the multiplier applies.
    pub epoch: usize,
    pub multiplier: f64,
}

/// Piecewise-constant learning-rate schedule.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    #[serde(default)]
    pub milestones: Vec<Milestone>,
}

impl LrSchedule {
    pub fn constant() -> Self {
        LrSchedule::default()
    }

    /// Multiplies by `factor` at each listed epoch.
    pub fn step_decay(epochs: &[usize], factor: f64) -> Self {
        LrSchedule {
            milestones: epochs
                .iter()
                .map(|&epoch| Milestone {
                    epoch,
                    multiplier: factor,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, m) in self.milestones.iter().enumerate() {
            if !(m.multiplier > 0.0 && m.multiplier.is_finite()) {
                return Err(Error::config(
                    format!("schedule.milestones[{i}].multiplier"),
                    "must be > 0",
                ));
            }
            if i > 0 && self.milestones[i - 1].epoch >= m.epoch {
                return Err(Error::config(
                    format!("schedule.milestones[{i}].epoch"),
                    "epochs must be strictly increasing",
                ));
            }
        }
        Ok(())
    }

    /// Learning rate in effect during zero-based `epoch`.
    pub fn learning_rate_at(&self, base: f64, epoch: usize) -> f64 {
        self.milestones
            .iter()
            .filter(|m| m.epoch <= epoch)
            .fold(base, |lr, m| lr * m.multiplier)
    }
}
