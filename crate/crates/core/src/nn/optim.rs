use serde::{Deserialize, Serialize};

use super::{Gradients, NnError};

/// SGD with momentum and step learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub decay_gamma: f64,
    pub decay_every_epochs: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            decay_gamma: 0.1,
            decay_every_epochs: 5,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::BadHyperparameter(m.to_string()));
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.decay_gamma > 0.0 && self.decay_gamma <= 1.0) {
            return bad("decay gamma must lie in (0, 1]");
        }
        if self.decay_every_epochs == 0 {
            return bad("decay interval must be positive");
        }
        Ok(())
    }

    /// `lr * gamma^floor(epoch / decay_every)`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.decay_every_epochs) as i32;
        self.learning_rate * self.decay_gamma.powi(steps)
    }
}

/// Velocity buffers for one parameter set.
#[derive(Debug, Clone)]
pub struct SgdState {
    pub config: SgdConfig,
    velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(config: SgdConfig, params: &[&[f64]]) -> Self {
        Self {
            config,
            velocity: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    /// `v = momentum * v + g; p -= lr * v`.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &Gradients, lr: f64) {
        let mu = self.config.momentum;
        for ((p, g), v) in params.into_iter().zip(&grads.0).zip(&mut self.velocity) {
            for ((pk, gk), vk) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vk = mu * *vk + gk;
                *pk -= lr * *vk;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_step_decay() {
        let c = SgdConfig::default();
        for t in 0..15 {
            let expected = 0.001 * 0.1_f64.powi((t / 5) as i32);
            assert_eq!(c.learning_rate_at(t), expected);
        }
        assert_eq!(c.learning_rate_at(4), 0.001);
        assert!((c.learning_rate_at(5) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = vec![1.0];
        let mut s = SgdState::new(SgdConfig::default(), &[&p]);
        let g = Gradients(vec![vec![1.0]]);
        s.step(vec![&mut p[..]], &g, 0.1);
        assert!((p[0] - 0.9).abs() < 1e-15);
        s.step(vec![&mut p[..]], &g, 0.1);
        // v = 0.9 * 1 + 1 = 1.9
        assert!((p[0] - (0.9 - 0.19)).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = SgdConfig {
            momentum: 1.0,
            ..SgdConfig::default()
        };
        assert!(c.validate().is_err());
        c = SgdConfig {
            decay_every_epochs: 0,
            ..SgdConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
