use super::array::Array;
use super::params::ParamStore;

/// Adam with bias correction. Moment buffers are indexed like the store.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Array>,
    v: Vec<Array>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(1e-3, 0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every trainable entry, then zeroes all gradients.
    pub fn step(&mut self, store: &mut ParamStore) {
        if self.m.len() != store.len() {
            self.m = store.entries().iter().map(|e| Array::zeros(e.value.shape())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, e) in store.entries_mut().iter_mut().enumerate() {
            if !e.trainable {
                continue;
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((p, &g), mi), vi) in e
                .value
                .data_mut()
                .iter_mut()
                .zip(e.grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        store.zero_grad();
    }
}

/// Plain gradient descent `θ ← θ − η∇θ`.
#[derive(Debug, Clone, Copy)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step(&self, store: &mut ParamStore) {
        for e in store.entries_mut() {
            if !e.trainable {
                continue;
            }
            for (p, g) in e.value.data_mut().iter_mut().zip(e.grad.data()) {
                *p -= self.lr * g;
            }
        }
        store.zero_grad();
    }
}
