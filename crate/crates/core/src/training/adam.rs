use serde::{Deserialize, Serialize};

use crate::autodiff::GradientRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
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

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("Adam epsilon must be positive"));
        }
        Ok(())
    }
}

/// First/second moment accumulators and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }

    /// Bias-corrected Adam update of `theta` in place. `name` labels a
    /// parameter index for error messages.
    pub fn update(
        &mut self,
        grads: &[f64],
        theta: &mut [f64],
        cfg: &AdamConfig,
        name: impl Fn(usize) -> String,
    ) -> Result<()> {
        if grads.len() != self.len() || theta.len() != self.len() {
            return Err(Error::invalid(format!(
                "Adam state has {} entries, got {} gradients and {} parameters",
                self.len(),
                grads.len(),
                theta.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(name(i)));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..theta.len() {
            let g = grads[i];
            let m = cfg.beta1 * self.first_moment[i] + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * self.second_moment[i] + (1.0 - cfg.beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        Ok(())
    }
}

/// One Adam step driven by a [`GradientRecord`].
pub fn adam_step(
    state: &mut AdamState,
    grads: &GradientRecord,
    theta: &mut [f64],
    cfg: &AdamConfig,
) -> Result<()> {
    state.update(&grads.values, theta, cfg, |i| {
        grads
            .ids
            .get(i)
            .map(|id| id.to_string())
            .unwrap_or_else(|| format!("#{i}"))
    })
}
