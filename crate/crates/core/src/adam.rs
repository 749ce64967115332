//! Bias-corrected Adam.

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

#[derive(Copy, Clone, Debug)]
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
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    first_moment: Tensor2,
    second_moment: Tensor2,
    step_count: u64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        AdamState {
            first_moment: Tensor2::zeros(rows, cols),
            second_moment: Tensor2::zeros(rows, cols),
            step_count: 0,
        }
    }

    pub fn for_param(param: &Tensor2) -> Self {
        let (r, c) = param.shape();
        AdamState::new(r, c)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One in-place Adam update. A non-finite gradient aborts before touching the
/// parameter and reports the offending entry.
pub fn adam_step(
    param: &mut Tensor2,
    grad: &Tensor2,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != state.first_moment.shape() {
        return Err(Error::shape(
            "adam_step",
            format!("{}x{}", param.shape().0, param.shape().1),
            format!(
                "grad {}x{}, state {}x{}",
                grad.shape().0,
                grad.shape().1,
                state.first_moment.shape().0,
                state.first_moment.shape().1
            ),
        ));
    }
    if let Some(index) = grad.first_non_finite() {
        return Err(Error::NonFinite {
            what: "gradient".to_string(),
            index,
        });
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    let p = param.data_mut();
    let m = state.first_moment.data_mut();
    let v = state.second_moment.data_mut();
    for i in 0..p.len() {
        let g = grad.data()[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut param = Tensor2::row_vector(&[1.0, -2.5, 0.0]);
        let before = param.clone();
        let grad = Tensor2::zeros(1, 3);
        let mut state = AdamState::for_param(&param);
        let cfg = AdamConfig::default();
        for _ in 0..5 {
            adam_step(&mut param, &grad, &mut state, &cfg).unwrap();
        }
        assert_eq!(param, before);
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn first_step_matches_bias_corrected_formula() {
        // lr = 1e-3, scalar param 1.0, grad 0.1:
        // m_hat = 0.1, v_hat = 0.01, step = 1e-3 * 0.1 / (0.1 + eps) ~= 1e-3
        let mut param = Tensor2::scalar(1.0);
        let grad = Tensor2::scalar(0.1);
        let mut state = AdamState::for_param(&param);
        let cfg = AdamConfig::default();
        adam_step(&mut param, &grad, &mut state, &cfg).unwrap();
        assert!((param.scalar_value() - 0.999).abs() < 1e-9, "{}", param.scalar_value());
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let mut param = Tensor2::scalar(0.5);
        let grad = Tensor2::scalar(0.3);
        let mut state = AdamState::for_param(&param);
        let cfg = AdamConfig::default();
        let mut prev = param.scalar_value();
        for _ in 0..2 {
            adam_step(&mut param, &grad, &mut state, &cfg).unwrap();
            assert!(param.scalar_value() < prev);
            prev = param.scalar_value();
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut param = Tensor2::row_vector(&[1.0, 2.0]);
        let before = param.clone();
        let grad = Tensor2::row_vector(&[0.1, f64::NAN]);
        let mut state = AdamState::for_param(&param);
        let err = adam_step(&mut param, &grad, &mut state, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
        assert_eq!(param, before);
        assert_eq!(state.step_count(), 0);
    }
}
