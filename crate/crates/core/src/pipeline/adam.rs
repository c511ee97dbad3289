//! Adam optimizer.

use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// One bias-corrected Adam update at step `t` (1-based), in place.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
) {
    let c1 = 1.0 - beta1.powf(t as f64);
    let c2 = 1.0 - beta2.powf(t as f64);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// First and second moments, one pair per parameter of a store, plus the
/// step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn for_store(store: &ParamStore) -> Self {
        let zeros = || store.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        AdamState {
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn bitwise_eq(&self, other: &AdamState) -> bool {
        let same = |a: &[Tensor], b: &[Tensor]| {
            a.len() == b.len()
                && a.iter().zip(b).all(|(x, y)| {
                    x.shape() == y.shape() && x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits())
                })
        };
        self.t == other.t && same(&self.m, &other.m) && same(&self.v, &other.v)
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: AdamState,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Adam {
            lr,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            state: AdamState::for_store(store),
        }
    }

    /// Applies the accumulated gradients of every trainable parameter.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.state.m.len() != store.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} parameters, store has {}",
                self.state.m.len(),
                store.len()
            )));
        }
        self.state.t += 1;
        let t = self.state.t;
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            if p.kind != ParamKind::Trainable {
                continue;
            }
            let grad = p.grad.clone();
            adam_update(
                p.value.data_mut(),
                grad.data(),
                self.state.m[i].data_mut(),
                self.state.v[i].data_mut(),
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                t,
            );
        }
        Ok(())
    }
}

/// Scales all trainable gradients so their global L2 norm is at most
/// `max_norm`. Returns the norm before scaling.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store
        .params()
        .iter()
        .filter(|p| p.kind == ParamKind::Trainable)
        .map(|p| p.grad.dot(&p.grad))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for p in store.params_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}
