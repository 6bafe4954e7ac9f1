//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::nn::{DenseNet, Gradients};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    /// Defaults for adversarial networks (beta1 = 0.5).
    pub fn gan(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Defaults for reconstruction training (beta1 = 0.9).
    pub fn standard(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(Error::Config(format!(
                "Adam betas must lie in (0, 1), got {} / {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("Adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Moment estimates for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step_count: u64,
    first_moment: Gradients,
    second_moment: Gradients,
}

impl AdamState {
    pub fn new(net: &DenseNet, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step_count: 0,
            first_moment: Gradients::zeros_like(net),
            second_moment: Gradients::zeros_like(net),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &Gradients {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &Gradients {
        &self.second_moment
    }

    /// Applies one Adam update to `net`. Rejects the whole step, leaving both
    /// the net and the state untouched, if any gradient entry is non-finite.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<()> {
        if !grads.congruent_with(net) || !self.first_moment.congruent_with(net) {
            return Err(Error::dims(
                "AdamState::step",
                format!("{:?}", net.layer_dims()),
                "incongruent gradient or moment shapes",
            ));
        }
        for (s, slice) in grads.slices().iter().enumerate() {
            if let Some(i) = slice.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    path: format!("gradient {}", grads.param_path(s, i)),
                });
            }
        }

        self.step_count += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        let params = net.param_slices_mut();
        let ms = self.first_moment.slices_mut();
        let vs = self.second_moment.slices_mut();
        for (((p, g), m), v) in params.into_iter().zip(grads.slices()).zip(ms).zip(vs) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
