use std::collections::BTreeMap;

use super::{ParamStore, Tensor};

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every parameter accepted by `trainable` from its stored grad.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64, trainable: impl Fn(&str) -> bool) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, p) in store.iter_mut() {
            if !trainable(name) {
                continue;
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.value.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.value.shape()));
            let (b1, b2) = (self.beta1, self.beta2);
            let values = p.value.data_mut();
            let grads = p.grad.data();
            for (i, (w, &g)) in values.iter_mut().zip(grads).enumerate() {
                let mi = &mut m.data_mut()[i];
                *mi = b1 * *mi + (1.0 - b1) * g;
                let vi = &mut v.data_mut()[i];
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let mhat = m.data()[i] / bc1;
                let vhat = v.data()[i] / bc2;
                *w -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * *w);
            }
        }
    }
}

/// Multiplicative step decay: `base · factor^⌊step / every⌋`.
pub fn step_decay_lr(base: f64, factor: f64, every: usize, step: usize) -> f64 {
    if every == 0 {
        return base;
    }
    base * factor.powi((step / every) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_schedule() {
        assert_eq!(step_decay_lr(1.0, 0.99, 300, 299), 1.0);
        assert!((step_decay_lr(1.0, 0.99, 300, 300) - 0.99).abs() < 1e-15);
        assert!((step_decay_lr(5e-4, 0.99, 300, 900) - 5e-4 * 0.99f64.powi(3)).abs() < 1e-18);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0, -1.0])).unwrap();
        store.accumulate_grad("w", &Tensor::vector(vec![2.0, -0.5]), 1.0).unwrap();
        let mut opt = AdamW::new(0.0);
        opt.step(&mut store, 0.1, |_| true);
        let w = store.value("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn frozen_params_untouched() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::vector(vec![1.0])).unwrap();
        store.insert("b", Tensor::vector(vec![1.0])).unwrap();
        store.accumulate_grad("a", &Tensor::vector(vec![1.0]), 1.0).unwrap();
        store.accumulate_grad("b", &Tensor::vector(vec![1.0]), 1.0).unwrap();
        let mut opt = AdamW::new(0.1);
        opt.step(&mut store, 0.01, |n| n == "a");
        assert_eq!(store.value("b").unwrap().data(), &[1.0]);
        assert!(store.value("a").unwrap().data()[0] < 1.0);
    }
}
