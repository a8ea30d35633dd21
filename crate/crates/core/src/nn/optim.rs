//! Optimizers with the update rules of the common deep learning toolkits.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};

/// Stochastic gradient descent with heavy-ball momentum:
/// `v <- mu * v + g; w <- w - lr * v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Vec<f64>>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId], lr: f64) {
        if self.velocity.len() < store.len() {
            self.velocity.resize(store.len(), None);
        }
        for &id in ids {
            let (data, grad) = store.get_mut(id).data_and_grad_mut();
            let Some(grad) = grad else { continue };
            let v = self.velocity[id.0].get_or_insert_with(|| vec![0.0; data.len()]);
            for ((w, g), v) in data.iter_mut().zip(grad).zip(v.iter_mut()) {
                let g = g + self.weight_decay * *w;
                *v = self.momentum * *v + g;
                *w -= lr * *v;
            }
        }
    }
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId]) {
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for &id in ids {
            let (data, grad) = store.get_mut(id).data_and_grad_mut();
            let Some(grad) = grad else { continue };
            let (m, v) = self.moments[id.0]
                .get_or_insert_with(|| (vec![0.0; data.len()], vec![0.0; data.len()]));
            for i in 0..data.len() {
                let g = grad[i] + self.weight_decay * data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Cosine annealing from `max_lr` at epoch 0 to `min_lr` at `total_epochs`.
pub fn cosine_lr(max_lr: f64, min_lr: f64, epoch: usize, total_epochs: usize) -> f64 {
    if total_epochs == 0 {
        return max_lr;
    }
    let t = epoch.min(total_epochs) as f64 / total_epochs as f64;
    min_lr + 0.5 * (max_lr - min_lr) * (1.0 + (PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store_with(value: f64, grad: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::param(vec![1], vec![value]));
        s.get_mut(id).accumulate_grad(&[grad]).unwrap();
        (s, id)
    }

    #[test]
    fn cosine_endpoints() {
        assert!((cosine_lr(2e-2, 5e-4, 0, 80) - 2e-2).abs() < 1e-15);
        assert!((cosine_lr(2e-2, 5e-4, 80, 80) - 5e-4).abs() < 1e-15);
        let mid = cosine_lr(2e-2, 5e-4, 40, 80);
        assert!((mid - (5e-4 + 0.5 * (2e-2 - 5e-4))).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_two_steps() {
        let (mut s, id) = store_with(1.0, 0.5);
        let mut opt = Sgd::new(0.9, 0.0);
        opt.step(&mut s, &[id], 0.1);
        assert!((s.get(id).data()[0] - 0.95).abs() < 1e-15);
        opt.step(&mut s, &[id], 0.1);
        // v = 0.9 * 0.5 + 0.5 = 0.95
        assert!((s.get(id).data()[0] - (0.95 - 0.095)).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let (mut s, id) = store_with(1.0, 3.0);
        let mut opt = Adam::new(3e-4, 0.0);
        opt.step(&mut s, &[id]);
        assert!((s.get(id).data()[0] - (1.0 - 3e-4)).abs() < 1e-10);
    }

    #[test]
    fn params_without_grad_are_untouched() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::param(vec![2], vec![1.0, 2.0]));
        Adam::new(0.1, 1e-3).step(&mut s, &[id]);
        Sgd::new(0.9, 0.0).step(&mut s, &[id], 0.1);
        assert_eq!(s.get(id).data(), &[1.0, 2.0]);
    }
}
