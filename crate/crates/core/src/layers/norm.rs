use log::warn;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{GroupMoments, NormGroups, Shape, Tape, Tensor, Var};

/// Variance epsilon used by every normalization in the crate.
pub const EPS: f64 = 1e-5;

/// Batch-normalization state: running moments and the train/eval switch.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub eps: f64,
    pub momentum: f64,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub training: bool,
    /// Number of running-stat updates so far.
    pub updates: u64,
}

impl NormStats {
    pub fn new(channels: usize) -> Self {
        NormStats {
            eps: EPS,
            momentum: 0.1,
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            training: true,
            updates: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn train(&mut self) {
        self.training = true;
    }

    pub fn eval(&mut self) {
        self.training = false;
    }

    /// `r ← (1 − m)·r + m·batch`, with the unbiased batch variance.
    pub fn update(&mut self, moments: &GroupMoments) {
        let m = self.momentum;
        let unbias = if moments.count > 1 {
            moments.count as f64 / (moments.count - 1) as f64
        } else {
            1.0
        };
        for (k, (rm, rv)) in self.running_mean.iter_mut().zip(&mut self.running_var).enumerate() {
            *rm = ((1.0 - m) * *rm as f64 + m * moments.mean[k]) as f32;
            *rv = ((1.0 - m) * *rv as f64 + m * moments.var[k] * unbias) as f32;
        }
        self.updates += 1;
    }
}

pub fn instance_norm<T: Real>(tape: &mut Tape<T>, x: Var, eps: f64) -> Var {
    tape.normalize(x, NormGroups::PerInstance, eps).0
}

/// Normalization step of batch normalization, without affine.
///
/// In training mode this uses batch statistics over `N×H×W` and returns the
/// batch moments so the caller can fold them into the running stats; in eval
/// mode it applies the running stats as a constant per-channel affine.
pub fn normalize_batch<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    stats: &NormStats,
) -> Result<(Var, Option<GroupMoments>)> {
    let c = tape.shape(x).c;
    if stats.channels() != c {
        return Err(Error::shape(
            "batch_norm",
            format!("stats for {} channels, input has {c}", stats.channels()),
        ));
    }
    if stats.training {
        let (y, m) = tape.normalize(x, NormGroups::PerChannel, stats.eps);
        return Ok((y, Some(m)));
    }
    if stats.updates == 0 {
        warn!("batch norm in eval mode before any training step; using initial running stats");
    }
    let shape = Shape::new(1, c, 1, 1);
    let inv: Vec<f64> = stats
        .running_var
        .iter()
        .map(|&v| 1.0 / (v as f64 + stats.eps).sqrt())
        .collect();
    let scale = Tensor::from_vec(shape, inv.iter().map(|&v| T::from_f64(v)).collect())?;
    let shift = Tensor::from_vec(
        shape,
        stats
            .running_mean
            .iter()
            .zip(&inv)
            .map(|(&m, &i)| T::from_f64(-(m as f64) * i))
            .collect(),
    )?;
    let (s, b) = (tape.constant(scale), tape.constant(shift));
    Ok((tape.affine(x, s, b)?, None))
}

/// Batch normalization with per-channel `scale`/`shift` (`1×C×1×1`). Updates
/// the running stats when training.
pub fn batch_norm<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    stats: &mut NormStats,
    scale: Var,
    shift: Var,
) -> Result<Var> {
    let (xhat, moments) = normalize_batch(tape, x, stats)?;
    if let Some(m) = moments {
        stats.update(&m);
    }
    tape.affine(xhat, scale, shift)
}
