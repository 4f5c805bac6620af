use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{GroupMoments, Shape, Tape, Tensor, Var};

use super::norm::{normalize_batch, NormStats};

/// Weights of SPADE's modulation network: a shared `k×k` conv from the
/// one-hot mask to `C_m` hidden channels, then two `k×k` heads to `C` channels
/// for `γ(m)` and `β(m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpadeBlockParams {
    pub shared_w: Tensor<f32>,
    pub shared_b: Tensor<f32>,
    pub gamma_w: Tensor<f32>,
    pub gamma_b: Tensor<f32>,
    pub beta_w: Tensor<f32>,
    pub beta_b: Tensor<f32>,
}

#[derive(Clone, Copy, Debug)]
pub struct SpadeVars {
    pub shared_w: Var,
    pub shared_b: Var,
    pub gamma_w: Var,
    pub gamma_b: Var,
    pub beta_w: Var,
    pub beta_b: Var,
}

fn uniform_fill(shape: Shape, bound: f32, rng: &mut impl Rng) -> Tensor<f32> {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::from_fn(shape, |_, _, _, _| dist.sample(rng))
}

impl SpadeBlockParams {
    /// Zero head weights with `γ`-bias 1 and `β`-bias 0, so `γ(m) ≡ 1`,
    /// `β(m) ≡ 0`. The shared conv is zero too.
    pub fn identity(num_classes: usize, hidden: usize, channels: usize, k: usize) -> Self {
        SpadeBlockParams {
            shared_w: Tensor::zeros(Shape::new(hidden, num_classes, k, k)),
            shared_b: Tensor::zeros(Shape::new(1, hidden, 1, 1)),
            gamma_w: Tensor::zeros(Shape::new(channels, hidden, k, k)),
            gamma_b: Tensor::ones(Shape::new(1, channels, 1, 1)),
            beta_w: Tensor::zeros(Shape::new(channels, hidden, k, k)),
            beta_b: Tensor::zeros(Shape::new(1, channels, 1, 1)),
        }
    }

    /// Uniform `±1/√fan_in` weights; head biases start at the identity
    /// modulation (`γ` bias 1, `β` bias 0).
    pub fn init(num_classes: usize, hidden: usize, channels: usize, k: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::identity(num_classes, hidden, channels, k);
        let shared_bound = 1.0 / ((num_classes * k * k) as f32).sqrt();
        let head_bound = 1.0 / ((hidden * k * k) as f32).sqrt();
        p.shared_w = uniform_fill(p.shared_w.shape(), shared_bound, rng);
        p.gamma_w = uniform_fill(p.gamma_w.shape(), head_bound, rng);
        p.beta_w = uniform_fill(p.beta_w.shape(), head_bound, rng);
        p
    }

    pub fn num_classes(&self) -> usize {
        self.shared_w.shape().c
    }

    pub fn hidden(&self) -> usize {
        self.shared_w.shape().n
    }

    pub fn channels(&self) -> usize {
        self.gamma_w.shape().n
    }

    pub fn kernel(&self) -> usize {
        self.shared_w.shape().h
    }

    pub fn num_params(&self) -> usize {
        [&self.shared_w, &self.shared_b, &self.gamma_w, &self.gamma_b, &self.beta_w, &self.beta_b]
            .iter()
            .map(|t| t.len())
            .sum()
    }

    pub fn register<T: Real>(&self, tape: &mut Tape<T>) -> SpadeVars {
        SpadeVars {
            shared_w: tape.param(self.shared_w.cast()),
            shared_b: tape.param(self.shared_b.cast()),
            gamma_w: tape.param(self.gamma_w.cast()),
            gamma_b: tape.param(self.gamma_b.cast()),
            beta_w: tape.param(self.beta_w.cast()),
            beta_b: tape.param(self.beta_b.cast()),
        }
    }
}

/// `(γ(m), β(m))` from a one-hot mask `N×N_c×H×W`.
pub fn spade_modulation<T: Real>(tape: &mut Tape<T>, onehot: Var, p: SpadeVars) -> Result<(Var, Var)> {
    let nc = tape.shape(p.shared_w).c;
    let oc = tape.shape(onehot).c;
    if oc != nc {
        return Err(Error::shape(
            "spade",
            format!("one-hot mask has {oc} channels, modulation network expects N_c={nc}"),
        ));
    }
    let pad = (tape.shape(p.shared_w).h - 1) / 2;
    let hidden = tape.conv2d(onehot, p.shared_w, Some(p.shared_b), 1, pad)?;
    let hidden = tape.relu(hidden);
    let gamma = tape.conv2d(hidden, p.gamma_w, Some(p.gamma_b), 1, pad)?;
    let beta = tape.conv2d(hidden, p.beta_w, Some(p.beta_b), 1, pad)?;
    Ok((gamma, beta))
}

/// Spatially-adaptive denormalization: batch-statistics normalization, then
/// `γ(m)·x̂ + β(m)` with maps regressed from the one-hot mask.
pub fn spade_forward<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    onehot: Var,
    p: SpadeVars,
    stats: &NormStats,
) -> Result<(Var, Option<GroupMoments>)> {
    let (xs, ms) = (tape.shape(x), tape.shape(onehot));
    if (xs.n, xs.h, xs.w) != (ms.n, ms.h, ms.w) {
        return Err(Error::shape("spade", format!("mask {ms} for feature {xs}")));
    }
    let (xhat, moments) = normalize_batch(tape, x, stats)?;
    let (gamma, beta) = spade_modulation(tape, onehot, p)?;
    Ok((tape.affine(xhat, gamma, beta)?, moments))
}
