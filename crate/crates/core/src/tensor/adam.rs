//! Adam optimizer with bias correction.

use super::params::ParamStore;
use super::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
}

impl<S: Scalar> AdamConfig<S> {
    /// β1=0.9, β2=0.999, ε=1e-8 with the given learning rate.
    pub fn with_lr(lr: S) -> Self {
        AdamConfig {
            lr,
            beta1: S::from_f64(0.9),
            beta2: S::from_f64(0.999),
            eps: S::from_f64(1e-8),
        }
    }
}

/// One Adam update on a single tensor. `t` is the 1-based step count.
#[allow(clippy::too_many_arguments)]
pub fn adam_update<S: Scalar>(
    value: &mut [S],
    grad: &[S],
    m: &mut [S],
    v: &mut [S],
    t: u64,
    cfg: &AdamConfig<S>,
) {
    let bc1 = S::one() - cfg.beta1.powi(t as i32);
    let bc2 = S::one() - cfg.beta2.powi(t as i32);
    for i in 0..value.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (S::one() - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (S::one() - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        value[i] = value[i] - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Moment buffers for every trainable parameter of a store.
pub struct AdamState<S> {
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn for_store(store: &ParamStore<S>) -> Self {
        let m = store
            .iter()
            .map(|p| if p.trainable { vec![S::zero(); p.numel()] } else { Vec::new() })
            .collect::<Vec<_>>();
        let v = m.clone();
        AdamState { m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Apply one step using the gradients currently held by the store, then
    /// zero them.
    pub fn step(&mut self, store: &mut ParamStore<S>, cfg: &AdamConfig<S>) {
        self.t += 1;
        for (idx, p) in store.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            adam_update(&mut p.value, &p.grad, &mut self.m[idx], &mut self.v[idx], self.t, cfg);
        }
        store.zero_grads();
    }
}
