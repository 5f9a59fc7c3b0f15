//! AdamW with decoupled weight decay, and per-epoch cosine annealing.

use alloc::vec;
use alloc::vec::Vec;

use crate::{CoreError, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// `lr_min + 0.5 (lr0 - lr_min) (1 + cos(pi t / T))`. Epochs past the
/// horizon stay at `lr_min`.
pub fn cosine_lr(t: usize, horizon: usize, lr0: f64, lr_min: f64) -> f64 {
    if horizon == 0 || t >= horizon {
        return lr_min;
    }
    let c = libm::cos(core::f64::consts::PI * t as f64 / horizon as f64);
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPS,
        }
    }
}

/// One AdamW step in place. `decay[i]` selects which coordinates receive the
/// decoupled `lr * weight_decay * theta` shrinkage. Non-finite gradients
/// refuse the step and leave both parameters and state untouched.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    decay: &[bool],
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    CoreError::check_len(params.len(), grads.len())?;
    CoreError::check_len(params.len(), decay.len())?;
    CoreError::check_len(params.len(), state.m.len())?;
    if !(lr >= 0.0) {
        return Err(CoreError::domain("learning rate", lr, "[0, inf)"));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(CoreError::NonFiniteGradient(i));
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let t = state.t as f64;
    let c1 = 1.0 - libm::pow(b1, t);
    let c2 = 1.0 - libm::pow(b2, t);
    for i in 0..params.len() {
        let g = grads[i];
        let m = b1 * state.m[i] + (1.0 - b1) * g;
        let v = b2 * state.v[i] + (1.0 - b2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let m_hat = m / c1;
        let v_hat = v / c2;
        let theta = params[i];
        let wd = if decay[i] { weight_decay } else { 0.0 };
        params[i] = theta - lr * m_hat / (libm::sqrt(v_hat) + state.eps) - lr * wd * theta;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 1e-4, 0.0), 1e-4);
        assert_eq!(cosine_lr(100, 100, 1e-4, 0.0), 0.0);
        assert_eq!(cosine_lr(150, 100, 1e-4, 1e-6), 1e-6);
        assert!((cosine_lr(50, 100, 1e-4, 2e-5) - 6e-5).abs() < 1e-18);
    }

    #[test]
    fn single_step_closed_form() {
        let mut p = [1.0];
        let mut s = OptimizerState::new(1);
        adamw_step(&mut p, &[1.0], &[true], &mut s, 0.1, 0.0).unwrap();
        assert!((p[0] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((p[0] - 0.9).abs() < 1e-8);

        let mut p = [1.0];
        let mut s = OptimizerState::new(1);
        adamw_step(&mut p, &[1.0], &[true], &mut s, 0.1, 0.01).unwrap();
        assert!((p[0] - 0.899).abs() < 1e-8);

        // no decay on excluded coordinates
        let mut p = [1.0];
        let mut s = OptimizerState::new(1);
        adamw_step(&mut p, &[1.0], &[false], &mut s, 0.1, 0.01).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_is_no_op() {
        let mut p = [0.7, -3.0];
        let mut s = OptimizerState::new(2);
        adamw_step(&mut p, &[0.0, 0.0], &[true, true], &mut s, 0.1, 0.0).unwrap();
        assert_eq!(p, [0.7, -3.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn non_finite_gradient_refused() {
        let mut p = [1.0, 2.0];
        let mut s = OptimizerState::new(2);
        let before = s.clone();
        let err = adamw_step(&mut p, &[0.1, f64::NAN], &[true, true], &mut s, 0.1, 0.0);
        assert_eq!(err, Err(CoreError::NonFiniteGradient(1)));
        assert_eq!(p, [1.0, 2.0]);
        assert_eq!(s, before);
    }
}
