//! Adam and reduce-on-plateau.

use serde::{Deserialize, Serialize};

use super::{ClassifierModel, Gradients};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-7 }
    }
}

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, params: usize) -> Self {
        Self { config, m: vec![0.0; params], v: vec![0.0; params], t: 0 }
    }

    /// One update of `params` in place with learning rate `lr`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        let AdamConfig { beta1, beta2, epsilon, .. } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }

    pub(crate) fn step_model(&mut self, model: &mut ClassifierModel, grads: &Gradients, lr: f64) {
        let AdamConfig { beta1, beta2, epsilon, .. } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let mut k = 0;
        for (layer, (gw, gb)) in model.layers.iter_mut().zip(grads.weights.iter().zip(&grads.bias)) {
            for (p, &g) in layer.weights.iter_mut().chain(layer.bias.iter_mut()).zip(gw.iter().chain(gb)) {
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                k += 1;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self { factor: 0.2, patience: 5, min_lr: 1e-4 }
    }
}

/// Multiplies the rate by `factor` after `patience` epochs without a
/// strictly lower monitored value, never going below `min_lr`.
#[derive(Clone, Debug)]
pub struct ReduceOnPlateau {
    config: PlateauConfig,
    lr: f64,
    best: f64,
    wait: usize,
}

impl ReduceOnPlateau {
    pub fn new(config: PlateauConfig, lr: f64) -> Self {
        Self { config, lr, best: f64::INFINITY, wait: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Record one epoch's monitored value; returns the rate for the next epoch.
    pub fn observe(&mut self, value: f64) -> f64 {
        if value < self.best {
            self.best = value;
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.config.patience {
                if self.lr > self.config.min_lr {
                    self.lr = (self.lr * self.config.factor).max(self.config.min_lr);
                }
                self.wait = 0;
            }
        }
        self.lr
    }
}
