//! Adaptive-moment gradient descent.

use ndarray::{Array2, Zip};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

/// Adam state for a fixed list of parameter blocks.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    cfg: AdamConfig,
    step: i32,
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|s| (Array2::zeros(s), Array2::zeros(s)))
            .unzip();
        Adam { cfg, step: 0, m, v }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    /// Applies one update. `params` and `grads` are matched by position with
    /// the shapes given at construction.
    pub fn update(&mut self, params: &mut [&mut Array2<T>], grads: &[&Array2<T>]) {
        assert_eq!(params.len(), self.m.len(), "parameter block count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient block count changed");
        self.step += 1;
        let b1 = T::of(self.cfg.beta1);
        let b2 = T::of(self.cfg.beta2);
        let one = T::one();
        let bc1 = one - b1.powi(self.step);
        let bc2 = one - b2.powi(self.step);
        let lr = T::of(self.cfg.lr);
        let eps = T::of(self.cfg.eps);
        for (k, p) in params.iter_mut().enumerate() {
            Zip::from(&mut **p)
                .and(&mut self.m[k])
                .and(&mut self.v[k])
                .and(grads[k])
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}
