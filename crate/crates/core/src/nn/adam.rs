//! Adam parameter updates.

use crate::error::{Error, Result};

/// Adam hyperparameters. Only the learning rate is commonly changed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(
                "learning rate must be finite and non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("betas must lie in [0, 1)".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Per-parameter Adam state: first/second moment accumulators and the step
/// counter. Both accumulators start at zero; the counter increments by
/// exactly one per [`AdamState::step`].
#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
    cfg: AdamConfig,
}

impl AdamState {
    pub fn new(param_count: usize, cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step_count: 0,
            cfg,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// One bias-corrected update, minimizing: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    ///
    /// Rejects shape mismatches and non-finite gradients (reporting the first
    /// offending index) before touching any state, so a failed call leaves
    /// parameters and moments unchanged.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != self.first_moment.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam state holds {} parameters, got params={} grads={}",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient[{i}] = {} in adam step {}",
                grads[i],
                self.step_count + 1
            )));
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let c = &self.cfg;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.first_moment[i] = c.beta1 * self.first_moment[i] + (1.0 - c.beta1) * g;
            self.second_moment[i] = c.beta2 * self.second_moment[i] + (1.0 - c.beta2) * g * g;
            let m_hat = self.first_moment[i] / bias1;
            let v_hat = self.second_moment[i] / bias2;
            params[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut state = AdamState::new(3, AdamConfig::default()).unwrap();
        let mut params = vec![1.0, -2.0, 0.5];
        let before = params.clone();
        for _ in 0..10 {
            state.step(&mut params, &[0.0, 0.0, 0.0]).unwrap();
        }
        assert_eq!(params, before);
        assert_eq!(state.step_count(), 10);
    }

    #[test]
    fn first_step_moves_by_about_the_learning_rate() {
        let cfg = AdamConfig::with_learning_rate(1e-3);
        for g in [0.5, -2.0, 1e3] {
            let mut state = AdamState::new(1, cfg).unwrap();
            let mut params = vec![0.0];
            state.step(&mut params, &[g]).unwrap();
            let expected = -cfg.learning_rate * g.signum();
            assert!(
                (params[0] - expected).abs() < 1e-6 * cfg.learning_rate.abs().max(1e-12),
                "g={g}: moved {} expected {expected}",
                params[0]
            );
        }
    }

    #[test]
    fn identical_runs_give_bit_identical_trajectories() {
        let run = || {
            let mut state = AdamState::new(2, AdamConfig::with_learning_rate(1e-2)).unwrap();
            let mut params = vec![0.3, -0.7];
            for k in 0..100 {
                let g = [params[0] + k as f64 * 0.01, params[1] * 0.5];
                state.step(&mut params, &g).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_non_finite_gradients_with_index() {
        let mut state = AdamState::new(2, AdamConfig::default()).unwrap();
        let mut params = vec![0.0, 0.0];
        let err = state.step(&mut params, &[0.0, f64::NAN]).unwrap_err();
        assert!(err.to_string().contains("gradient[1]"), "{err}");
        assert_eq!(state.step_count(), 0);
        assert_eq!(params, vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut state = AdamState::new(2, AdamConfig::default()).unwrap();
        let mut params = vec![0.0, 0.0, 0.0];
        assert!(state.step(&mut params, &[1.0, 1.0]).is_err());
    }
}
