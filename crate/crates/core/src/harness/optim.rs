//! Adam with decoupled weight decay.

use crate::error::{Error, Result};
use crate::nn::Parameters;

#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, m: Vec::new(), v: Vec::new(), t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update with learning rate `lr`; `grads` follow [`Parameters::named`] order.
    pub fn step(&mut self, params: &mut impl Parameters<f32>, grads: &[Vec<f32>], lr: f64) -> Result<()> {
        let mut tensors = params.named_mut();
        if grads.len() != tensors.len() || tensors.iter().zip(grads).any(|((_, t), g)| t.numel() != g.len()) {
            return Err(Error::Contract("gradient layout does not match parameters".into()));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, ((_, t), g)) in tensors.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, p) in t.data_mut().iter_mut().enumerate() {
                let gi = g[i] as f64;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                let decayed = *p as f64 * (1.0 - lr * self.weight_decay);
                *p = (decayed - lr * update) as f32;
            }
        }
        Ok(())
    }
}

/// Elementwise sum of per-sample gradients, in order.
pub fn sum_grads(parts: Vec<Vec<Vec<f32>>>) -> Option<Vec<Vec<f32>>> {
    let mut it = parts.into_iter();
    let mut acc = it.next()?;
    for p in it {
        for (a, b) in acc.iter_mut().zip(p) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
    Some(acc)
}
