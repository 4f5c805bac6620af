use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam with bias correction, state kept per parameter path.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            steps: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// β1 = 0, β2 = 0.9, the usual GAN setting.
    pub fn gan(lr: f64) -> Self {
        Adam::new(lr, 0.0, 0.9)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Updates every parameter that has a gradient. All gradients are checked
    /// before anything is modified, so a non-finite value leaves the
    /// parameters untouched.
    pub fn step(&mut self, params: &mut BTreeMap<String, Tensor<f32>>, grads: &BTreeMap<String, Tensor<f32>>) -> Result<()> {
        for (path, g) in grads {
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient { path: path.clone() });
            }
            match params.get(path) {
                Some(p) if p.shape() == g.shape() => {}
                Some(p) => {
                    return Err(Error::shape(
                        "adam",
                        format!("gradient {} for parameter {path} of shape {}", g.shape(), p.shape()),
                    ))
                }
                None => return Err(Error::InvalidArgument(format!("gradient for unknown parameter {path}"))),
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (path, g) in grads {
            let p = params.get_mut(path).expect("checked above");
            let m = self.m.entry(path.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(path.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi as f64;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
                *pi = (*pi as f64 - update) as f32;
            }
        }
        Ok(())
    }
}
