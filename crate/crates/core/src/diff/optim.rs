use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{DiffError, ParamStore};
use crate::math;

/// Adam moment buffers, one pair per parameter in registration order.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub base_lr: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore, base_lr: f64) -> Self {
        Self {
            m: store.ids().map(|id| vec![0.0; store.value(id).len()]).collect(),
            v: store.ids().map(|id| vec![0.0; store.value(id).len()]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            base_lr,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update at learning rate `lr`. Gradients are left
/// untouched; the caller zeroes them between steps.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<(), DiffError> {
    for id in store.ids() {
        if store.grad(id).is_none() {
            return Err(DiffError::Optimizer(format!(
                "parameter {} has no gradient",
                store.name(id)
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - powi(state.beta1, t);
    let bc2 = 1.0 - powi(state.beta2, t);
    for id in store.ids() {
        let grad = store.grad(id).expect("checked above").to_vec();
        let m = &mut state.m[id.0];
        let v = &mut state.v[id.0];
        let values = store.value_mut(id);
        for i in 0..values.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * grad[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            values[i] -= lr * m_hat / (math::sqrt(v_hat) + state.epsilon);
        }
    }
    Ok(())
}

fn powi(base: f64, mut exp: i32) -> f64 {
    let mut acc = 1.0;
    let mut b = base;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= b;
        }
        b *= b;
        exp >>= 1;
    }
    acc
}

/// Cosine decay from `base_lr` at step 0 to zero at `total_steps`; steps past
/// the end clamp to the final value.
pub fn cosine_lr(step: u64, total_steps: u64, base_lr: f64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    base_lr * 0.5 * (1.0 + math::cos(core::f64::consts::PI * frac))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{backward, ops};

    #[test]
    fn first_adam_step_is_bias_corrected() {
        // With grad 1 on the first step, m_hat = 1 and v_hat = 1, so the
        // update is lr / (1 + eps) ~ lr.
        let mut store = ParamStore::new();
        let w = store.register("w", vec![1], vec![0.5]);
        let mut state = AdamState::new(&store, 1e-3);
        store.zero_grads();
        let leaf = store.leaf(w);
        backward(&ops::sum(&leaf), &mut store).unwrap();
        adam_step(&mut store, &mut state, 1e-3).unwrap();
        let expected = 0.5 - 1e-3 / (1.0 + 1e-8);
        assert!((store.value(w)[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut store = ParamStore::new();
        let w = store.register("w", vec![3], vec![1.0, 2.0, 3.0]);
        let mut state = AdamState::new(&store, 1e-3);
        store.zero_grads();
        adam_step(&mut store, &mut state, 1e-3).unwrap();
        assert_eq!(store.value(w), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn missing_grad_is_optimizer_error() {
        let mut store = ParamStore::new();
        store.register("w", vec![1], vec![0.0]);
        let mut state = AdamState::new(&store, 1e-3);
        assert!(matches!(
            adam_step(&mut store, &mut state, 1e-3),
            Err(DiffError::Optimizer(_))
        ));
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0, 100, 1e-3), 1e-3);
        assert!((cosine_lr(50, 100, 1e-3) - 5e-4).abs() < 1e-18);
        assert_eq!(cosine_lr(100, 100, 1e-3), 0.0);
        assert_eq!(cosine_lr(150, 100, 1e-3), 0.0);
    }
}
