use serde::{Deserialize, Serialize};

use super::network::Network;
use crate::error::{Result, SddsError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the populated gradients, then clears them.
    pub fn step(&mut self, net: &mut Network) -> Result<()> {
        if let Some(p) = net.params().iter().find(|p| p.tensor.grad().is_none()) {
            return Err(SddsError::MissingGradient(p.name.clone()));
        }
        if self.kind == OptimizerKind::Adam && self.first.is_empty() {
            self.first = net.params().iter().map(|p| vec![0.0; p.tensor.numel()]).collect();
            self.second = self.first.clone();
        }
        if self.kind == OptimizerKind::Adam && self.first.len() != net.params().len() {
            return Err(SddsError::Shape("optimizer moments do not match model parameters".into()));
        }
        self.step += 1;
        let lr = self.learning_rate;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (i, p) in net.params_mut().iter_mut().enumerate() {
            let grad = p.tensor.take_grad().expect("checked above");
            let w = p.tensor.data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (wi, gi) in w.iter_mut().zip(&grad) {
                        *wi -= lr * gi;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    if m.len() != w.len() {
                        return Err(SddsError::Shape(format!("moment buffer for {}", p.name)));
                    }
                    for j in 0..w.len() {
                        m[j] = b1 * m[j] + (1.0 - b1) * grad[j];
                        v[j] = b2 * v[j] + (1.0 - b2) * grad[j] * grad[j];
                        let m_hat = m[j] / c1;
                        let v_hat = v[j] / c2;
                        w[j] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
