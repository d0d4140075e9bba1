use serde::{Deserialize, Serialize};

use super::{Gradients, Mlp, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global-norm clip applied before each step; `None` disables it.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_grad_norm: Some(10.0),
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

/// Adam with bias correction. Moments are shaped like the network they were
/// created for.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(net: &Mlp, config: AdamConfig) -> Result<Self, NnError> {
        if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
            return Err(NnError::Config(format!(
                "learning rate must be positive, got {}",
                config.learning_rate
            )));
        }
        for (name, b) in [("beta1", config.beta1), ("beta2", config.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(NnError::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        Ok(Adam {
            config,
            step: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<(), NnError> {
        if grads.layers.len() != self.m.layers.len()
            || grads
                .layers
                .iter()
                .zip(&self.m.layers)
                .any(|(g, m)| g.weights.len() != m.weights.len() || g.bias.len() != m.bias.len())
        {
            return Err(NnError::Architecture(
                "gradients do not match optimizer state".into(),
            ));
        }
        if let Some(param) = grads.first_non_finite() {
            return Err(NnError::NonFinite { param });
        }

        let mut scale = 1.0;
        if let Some(max_norm) = self.config.max_grad_norm {
            let norm = grads.global_norm();
            if norm > max_norm {
                scale = max_norm / norm;
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);

        let mut delta = Gradients::zeros_like(net);
        for (((g, m), v), d) in grads
            .layers
            .iter()
            .zip(&mut self.m.layers)
            .zip(&mut self.v.layers)
            .zip(&mut delta.layers)
        {
            let gs = g.weights.iter().chain(&g.bias);
            let ms = m.weights.iter_mut().chain(m.bias.iter_mut());
            let vs = v.weights.iter_mut().chain(v.bias.iter_mut());
            let ds = d.weights.iter_mut().chain(d.bias.iter_mut());
            for (((g, m), v), d) in gs.zip(ms).zip(vs).zip(ds) {
                let g = g * scale;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *d = -learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        net.apply_delta(&delta);
        Ok(())
    }
}
