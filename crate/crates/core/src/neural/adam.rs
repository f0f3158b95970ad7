use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: 1.0,
        }
    }
}

/// Adaptive-moment optimizer with bias correction and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    pub steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        self.step_with_lr(params, grads, self.config.lr)
    }

    pub fn step_with_lr(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer built for {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        let c = &self.config;
        let mut scale = 1.0;
        if c.clip_norm > 0.0 {
            let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > c.clip_norm {
                scale = c.clip_norm / norm;
            }
        }
        self.steps += 1;
        let bc1 = 1.0 - c.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - c.beta2.powi(self.steps as i32);
        for i in 0..params.len() {
            let g = grads[i] * scale;
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * params[i]);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![0.5, -1.0, 2.0];
        let before = p.clone();
        let mut opt = Adam::new(AdamConfig::default(), 3);
        opt.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn step_reduces_convex_quadratic() {
        // f(x) = Σ (x_i - c_i)^2
        let c = [1.0, -2.0, 0.5];
        let f = |x: &[f64]| x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let mut x = vec![0.0; 3];
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.01,
                clip_norm: 0.0,
                ..AdamConfig::default()
            },
            3,
        );
        let before = f(&x);
        let g: Vec<f64> = x.iter().zip(&c).map(|(a, b)| 2.0 * (a - b)).collect();
        opt.step(&mut x, &g).unwrap();
        assert!(f(&x) < before);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut opt = Adam::new(AdamConfig::default(), 2);
        assert!(opt.step(&mut [0.0; 3], &[0.0; 3]).is_err());
    }
}
