use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Schedule {
    #[default]
    Constant,
    /// `lr * model_dim^-0.5 * min(step^-0.5, step * warmup^-1.5)`
    Noam { model_dim: usize, warmup: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub schedule: Schedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Optional global gradient-norm clip.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-4,
            schedule: Schedule::Constant,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            ..Self::default()
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and >= 0",
                self.lr
            )));
        }
        if let Schedule::Noam { model_dim, warmup } = self.schedule {
            if model_dim == 0 || warmup == 0 {
                return Err(Error::Config(
                    "noam needs positive model_dim and warmup".into(),
                ));
            }
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("clip_norm {c} must be positive")));
            }
        }
        Ok(())
    }

    /// Learning rate for 1-based `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Noam { model_dim, warmup } => {
                let s = step.max(1) as f64;
                self.lr
                    * (model_dim as f64).powf(-0.5)
                    * s.powf(-0.5).min(s * (warmup as f64).powf(-1.5))
            }
        }
    }
}

/// Optimizer with per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub config: OptimizerConfig,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// One update of `params` by `grads` (same order and shapes).
    pub fn apply(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "optimizer",
                format!("{} params, {} grads", params.len(), grads.len()),
            ));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "optimizer",
                    format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        self.step += 1;
        let lr = T::lit(self.config.lr_at(self.step));
        let clip = match self.config.clip_norm {
            Some(max) => {
                let norm = grads.iter().map(Tensor::sq_norm).sum::<T>().sqrt();
                let max = T::lit(max);
                if norm > max {
                    max / norm
                } else {
                    T::one()
                }
            }
            None => T::one(),
        };

        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * clip * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.first.is_empty() {
                    self.first = grads.iter().map(Tensor::zeros_like).collect();
                    self.second = grads.iter().map(Tensor::zeros_like).collect();
                }
                let b1 = T::lit(self.config.beta1);
                let b2 = T::lit(self.config.beta2);
                let eps = T::lit(self.config.eps);
                let t = i32::try_from(self.step).unwrap_or(i32::MAX);
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    let m = self.first[k].data_mut();
                    let v = self.second[k].data_mut();
                    for (((w, &d), mi), vi) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        let d = d * clip;
                        *mi = b1 * *mi + (T::one() - b1) * d;
                        *vi = b2 * *vi + (T::one() - b2) * d * d;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
