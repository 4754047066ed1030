use serde::{Deserialize, Serialize};

use super::tensor::{Element, Tensor};
use super::TensorError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Moment buffers and step counter for bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed moments congruent with `params`.
    pub fn new<T: Element>(config: AdamConfig, params: &[Tensor<T>]) -> Result<Self, TensorError> {
        if !(config.lr > 0.0 && config.lr.is_finite()) {
            return Err(TensorError::Argument(format!("adam: learning rate {} must be positive", config.lr)));
        }
        Ok(Self {
            config,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Apply one update to `params` given `grads` in the same order.
    pub fn step<T: Element>(&mut self, params: &mut [Tensor<T>], grads: &[Vec<T>]) -> Result<(), TensorError> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(TensorError::Argument(format!(
                "adam: {} params / {} grads for state of {}",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first[i].len() {
                return Err(TensorError::Shape {
                    op: "adam",
                    detail: format!("param {i}: {} values, {} grads, {} moments", p.len(), g.len(), self.first[i].len()),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite { op: "adam" });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, epsilon } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gv = gv.as_f64();
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let update = lr * (*mv / c1) / ((*vv / c2).sqrt() + epsilon);
                *pv = T::from_f64(pv.as_f64() - update);
            }
        }
        Ok(())
    }
}
