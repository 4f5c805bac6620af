//! Central finite-difference gradient checking.
//!
//! The checked function maps one input tensor to an output tensor `y`; the
//! scalar objective is `Σ wᵢ·yᵢ` with fixed pseudo-random weights in
//! `[0.5, 1.5]` (or weight 1 when `y` is already a scalar). The numeric side
//! accumulates that objective in `f64`, so storage rounding of unchanged
//! outputs cancels exactly between the two probes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::real::Real;

use super::{Shape, Tape, Tensor, Var};

const PROJECTION_SEED: u64 = 0x5eed_0f_9ad;

/// `|a − n| / max(1e−8, |a| + |n|)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn projection(shape: Shape) -> Vec<f64> {
    if shape.is_scalar() {
        return vec![1.0];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
    (0..shape.numel()).map(|_| rng.random_range(0.5..1.5)).collect()
}

fn analytic_grad<T, F>(f: &F, x: &Tensor<T>) -> Result<Vec<f64>>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::<T>::new();
    let xv = tape.param(x.clone());
    let y = f(&mut tape, xv)?;
    let shape = tape.shape(y);
    let w = Tensor::from_vec(shape, projection(shape).into_iter().map(T::from_f64).collect())?;
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    let loss = tape.sum(p);
    let g = tape.backward(loss)?;
    Ok(g.wrt(xv).data().iter().map(|v| v.to_f64()).collect())
}

fn objective<T, F>(f: &F, x: Tensor<T>, weights: &mut Option<Vec<f64>>) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::<T>::inference();
    let xv = tape.constant(x);
    let y = f(&mut tape, xv)?;
    let yv = tape.value(y);
    let w = weights.get_or_insert_with(|| projection(yv.shape()));
    Ok(yv.data().iter().zip(w.iter()).map(|(v, w)| v.to_f64() * w).sum())
}

fn numeric_grad<T, F>(f: &F, x: &Tensor<T>, eps: f64) -> Result<Vec<f64>>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut weights = None;
    let mut out = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let base = x.data()[j].to_f64();
        let mut xp = x.clone();
        xp.data_mut()[j] = T::from_f64(base + eps);
        let mut xm = x.clone();
        xm.data_mut()[j] = T::from_f64(base - eps);
        let step = xp.data()[j].to_f64() - xm.data()[j].to_f64();
        let fp = objective(f, xp, &mut weights)?;
        let fm = objective(f, xm, &mut weights)?;
        out.push((fp - fm) / step);
    }
    Ok(out)
}

fn max_rel(a: &[f64], n: &[f64]) -> f64 {
    a.iter()
        .zip(n)
        .map(|(&a, &n)| rel_error(a, n))
        .fold(0.0, f64::max)
}

/// Max relative error between backprop and central differences, both at
/// precision `T`.
pub fn finite_diff_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let a = analytic_grad(&f, x)?;
    let n = numeric_grad(&f, x, eps)?;
    Ok(max_rel(&a, &n))
}

/// Backprop in 32-bit checked against central differences of the same graph
/// evaluated in 64-bit. `f32_fn` and `f64_fn` must build the same function.
pub fn finite_diff_check_against<F32, F64>(f32_fn: F32, f64_fn: F64, x: &Tensor<f32>, eps: f64) -> Result<f64>
where
    F32: Fn(&mut Tape<f32>, Var) -> Result<Var>,
    F64: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let a = analytic_grad(&f32_fn, x)?;
    let n = numeric_grad(&f64_fn, &x.cast::<f64>(), eps)?;
    Ok(max_rel(&a, &n))
}
