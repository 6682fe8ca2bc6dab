use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are allocated on the first
/// step and must line up with the same parameter list on every later step.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update to every parameter and zeroes their gradients.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if let Some(i) = params.iter().position(|p| !p.requires_grad()) {
            return Err(Error::State(format!("parameter {i} has no gradient buffer")));
        }
        if self.step_count == 0 && self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        if self.first_moment.len() != params.len()
            || self.first_moment.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::State(
                "parameter set changed shape since the optimizer was created".into(),
            ));
        }

        self.step_count += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);

        for ((param, m), v) in params
            .iter_mut()
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            let grad = param.grad().expect("checked above").to_vec();
            for (((x, g), m), v) in param.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *x -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
            param.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut p = Tensor::vector(vec![0.5, -1.5]).unwrap().trainable();
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::with_lr(0.1));
        adam.step(&mut [&mut p]).unwrap();
        assert_eq!(p.data(), before.data());
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Tensor::scalar(2.0).trainable();
        p.accumulate_grad(&[1.0]).unwrap();
        let mut adam = Adam::new(AdamConfig::with_lr(0.1));
        adam.step(&mut [&mut p]).unwrap();
        // m_hat = 1, v_hat = 1  =>  delta = lr / (1 + eps)
        assert!((2.0 - p.item() - 0.1).abs() < 1e-8);
        assert_eq!(p.grad(), Some(&[0.0][..]));
    }

    #[test]
    fn step_count_increments_by_one() {
        let mut p = Tensor::scalar(0.0).trainable();
        let mut adam = Adam::new(AdamConfig::default());
        for k in 1..=3 {
            adam.step(&mut [&mut p]).unwrap();
            assert_eq!(adam.step_count(), k);
        }
    }

    #[test]
    fn frozen_parameter_is_state_error() {
        let mut p = Tensor::scalar(0.0);
        let mut adam = Adam::new(AdamConfig::default());
        assert!(matches!(adam.step(&mut [&mut p]), Err(Error::State(_))));
    }
}
