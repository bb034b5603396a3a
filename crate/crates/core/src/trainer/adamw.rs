//! Adam with decoupled weight decay.

use crate::nn::{lit, ParameterStore, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<S> {
    pub config: AdamWConfig,
    pub t: u64,
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
}

impl<S: Real> AdamW<S> {
    pub fn new(config: AdamWConfig, store: &ParameterStore<S>) -> Self {
        let zeros = || store.ids().map(|id| Tensor::zeros(store.value(id).shape())).collect();
        Self { config, t: 0, m: zeros(), v: zeros() }
    }

    /// One update with learning rate `lr`:
    /// `p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)`.
    pub fn step_with_lr(&mut self, store: &mut ParameterStore<S>, lr: f64) {
        self.t += 1;
        let c = self.config;
        let b1 = lit::<S>(c.beta1);
        let b2 = lit::<S>(c.beta2);
        let one = S::one();
        let bc1 = lit::<S>(1.0 - c.beta1.powf(self.t as f64));
        let bc2 = lit::<S>(1.0 - c.beta2.powf(self.t as f64));
        let eps = lit::<S>(c.eps);
        let lr = lit::<S>(lr);
        let wd = lit::<S>(c.weight_decay);
        for (k, (p, g)) in store.values_and_grads_mut().enumerate() {
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let update = (*mi / bc1) / ((*vi / bc2).sqrt() + eps) + wd * *pi;
                *pi -= lr * update;
            }
        }
    }

    pub fn step(&mut self, store: &mut ParameterStore<S>) {
        self.step_with_lr(store, self.config.learning_rate);
    }
}
