use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Parameter(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::Parameter(format!(
                "beta1 must be in [0,1), got {}",
                self.beta1
            )));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Parameter(format!(
                "beta2 must be in [0,1), got {}",
                self.beta2
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Parameter(format!(
                "eps must be > 0, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// A trainable tensor together with its Adam moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub tensor: Tensor,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    step_count: u64,
}

impl Parameter {
    pub fn new(tensor: Tensor) -> Self {
        let n = tensor.len();
        Self {
            tensor,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.adam_m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.adam_v
    }

    /// One bias-corrected Adam update; consumes the gradient buffer.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        let grad = self
            .tensor
            .take_grad()
            .ok_or_else(|| Error::State("adam step on a parameter without gradient".into()))?;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let values = self.tensor.values_mut();
        for i in 0..values.len() {
            let g = grad[i];
            self.adam_m[i] = cfg.beta1 * self.adam_m[i] + (1.0 - cfg.beta1) * g;
            self.adam_v[i] = cfg.beta2 * self.adam_v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.adam_m[i] / bc1;
            let v_hat = self.adam_v[i] / bc2;
            values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        Ok(())
    }
}

/// Applies [`Parameter::adam_step`] to every parameter.
pub fn adam_step(params: &mut [&mut Parameter], cfg: &AdamConfig) -> Result<()> {
    params.iter_mut().try_for_each(|p| p.adam_step(cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64, g: f64) -> Parameter {
        let mut p = Parameter::new(Tensor::scalar(v));
        p.tensor.accumulate_grad(&[g]).unwrap();
        p
    }

    #[test]
    fn zero_gradient_is_bitwise_noop() {
        let cfg = AdamConfig::default();
        let init = vec![0.3, -1.7, 1e-300, -0.0];
        let mut p = Parameter::new(Tensor::vector(init.clone()));
        for _ in 0..10 {
            p.tensor.accumulate_grad(&[0.0; 4]).unwrap();
            p.adam_step(&cfg).unwrap();
        }
        let bits: Vec<u64> = p.tensor.values().iter().map(|v| v.to_bits()).collect();
        let want: Vec<u64> = init.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, want);
        assert_eq!(p.step_count(), 10);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        let cfg = AdamConfig::default();
        for g in [2.5, -0.01, 1e3] {
            let mut p = scalar_param(1.0, g);
            p.adam_step(&cfg).unwrap();
            // |g| / (|g| + eps) * lr
            let delta = p.tensor.values()[0] - 1.0;
            let expected = -cfg.lr * g.signum() * g.abs() / (g.abs() + cfg.eps);
            assert!((delta - expected).abs() < 1e-15, "g={g} delta={delta}");
            assert!(p.tensor.grad().is_none());
        }
    }

    #[test]
    fn repeated_gradient_keeps_direction() {
        let cfg = AdamConfig::default();
        let mut p = Parameter::new(Tensor::scalar(0.0));
        let mut prev = 0.0;
        for _ in 0..2 {
            p.tensor.accumulate_grad(&[0.7]).unwrap();
            p.adam_step(&cfg).unwrap();
            let now = p.tensor.values()[0];
            assert!(now - prev < 0.0);
            prev = now;
        }
        assert!(p.second_moment().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn missing_gradient_is_state_error() {
        let mut p = Parameter::new(Tensor::scalar(1.0));
        assert!(matches!(
            p.adam_step(&AdamConfig::default()),
            Err(Error::State(_))
        ));
        assert_eq!(p.step_count(), 0);
    }

    #[test]
    fn config_validation() {
        assert!(AdamConfig::default().validate().is_ok());
        let bad = AdamConfig {
            beta1: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AdamConfig {
            lr: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
