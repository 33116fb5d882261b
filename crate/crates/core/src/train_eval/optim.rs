//! Adamax: Adam with an infinity-norm second moment.

use crate::params::{Gradients, ParamStore};
use crate::tensor::Matrix;

#[derive(Clone, Debug)]
pub struct Adamax {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Matrix>,
    u: Vec<Matrix>,
}

impl Adamax {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Matrix> = store.iter().map(|(_, _, p)| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            u: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update with learning rate `lr`. Parameters without a gradient keep
    /// their moments and values.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.step += 1;
        let correction = 1.0 - self.beta1.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let i = id.index();
            let p = store.get_mut(id);
            let (m, u) = (&mut self.m[i], &mut self.u[i]);
            for (((x, &gv), mv), uv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(u.data_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *uv = (self.beta2 * *uv).max(gv.abs());
                *x -= lr / correction * *mv / (*uv + self.eps);
            }
        }
    }
}
