//! Adam with bias correction.

use thiserror::Error;

use crate::nn::ParamStore;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("adam: non-finite gradient in parameter group '{group}'")]
    NonFiniteGradient { group: String },
    #[error("adam: gradient length {grad} does not match parameter length {param} in group '{group}'")]
    LengthMismatch { group: String, param: usize, grad: usize },
    #[error("adam: learning rate must be positive, got {0}")]
    BadLearningRate(f64),
}

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
            learning_rate: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter moment estimates for one parameter group.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
        }
    }
}

/// One Adam update on a single parameter group.
pub fn adam_step(
    group_name: &str,
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), OptimError> {
    if cfg.learning_rate <= 0.0 {
        return Err(OptimError::BadLearningRate(cfg.learning_rate));
    }
    if params.len() != grads.len() {
        return Err(OptimError::LengthMismatch {
            group: group_name.to_string(),
            param: params.len(),
            grad: grads.len(),
        });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(OptimError::NonFiniteGradient {
            group: group_name.to_string(),
        });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// Adam over all groups of a [`ParamStore`].
pub struct Adam {
    pub cfg: AdamConfig,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let states = store
            .groups()
            .map(|g| AdamState::new(g.data.len()))
            .collect();
        Self { cfg, states }
    }

    /// Applies one update. `grads[i]` holds the gradient of group `i`;
    /// groups with `None` are treated as zero-gradient and left in place
    /// for the moment decay.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[Option<Vec<f64>>],
    ) -> Result<(), OptimError> {
        for (i, group) in store.groups_mut().enumerate() {
            let zeros;
            let g: &[f64] = match &grads[i] {
                Some(g) => g,
                None => {
                    zeros = vec![0.0; group.data.len()];
                    &zeros
                }
            };
            adam_step(&group.name, &mut group.data, g, &mut self.states[i], &self.cfg)?;
        }
        Ok(())
    }
}
