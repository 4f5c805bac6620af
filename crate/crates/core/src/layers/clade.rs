use std::sync::Arc;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{GroupMoments, Tape, Var};

use super::bank::BankVars;
use super::mask::LabelBatch;
use super::norm::{instance_norm, normalize_batch, NormStats};

/// Guided sampling: fills every pixel with its class's `(γ, β)` from the bank,
/// producing dense `N×C×H×W` modulation tensors.
///
/// Backward scatters each pixel's gradient into its class's bank entry.
/// Labels outside the bank are rejected, never clamped.
pub fn guided_sample<T: Real>(tape: &mut Tape<T>, labels: &LabelBatch, bank: BankVars) -> Result<(Var, Var)> {
    let gamma = tape.guided_sample(bank.gamma, labels.labels.clone(), labels.n, labels.h, labels.w)?;
    let beta = tape.guided_sample(bank.beta, labels.labels.clone(), labels.n, labels.h, labels.w)?;
    Ok((gamma, beta))
}

/// Class-adaptive denormalization: batch-statistics normalization followed by
/// `γ⃗·x̂ + β⃗` with guided-sampled modulation tensors.
///
/// `labels` must already be at the feature resolution. Returns the batch
/// moments in training mode for the caller to fold into `stats`.
pub fn clade_forward<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    labels: &LabelBatch,
    bank: BankVars,
    stats: &NormStats,
) -> Result<(Var, Option<GroupMoments>)> {
    let xs = tape.shape(x);
    if (labels.n, labels.h, labels.w) != (xs.n, xs.h, xs.w) {
        return Err(Error::shape(
            "clade",
            format!("mask batch {}x{}x{} for feature {xs}", labels.n, labels.h, labels.w),
        ));
    }
    let bs = tape.shape(bank.gamma);
    if bs.c != xs.c {
        return Err(Error::shape("clade", format!("bank has {} channels, feature {}", bs.c, xs.c)));
    }
    let (xhat, moments) = normalize_batch(tape, x, stats)?;
    let (gamma, beta) = guided_sample(tape, labels, bank)?;
    Ok((tape.affine(xhat, gamma, beta)?, moments))
}

/// Conditional instance normalization: instance statistics, then the
/// per-channel `(Γ[class], B[class])` of each sample's single class id.
pub fn conditional_in<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    class_ids: &[usize],
    bank: BankVars,
    eps: f64,
) -> Result<Var> {
    let xs = tape.shape(x);
    let nc = tape.shape(bank.gamma).n;
    if class_ids.len() != xs.n {
        return Err(Error::shape("conditional_in", format!("{} class ids for batch {}", class_ids.len(), xs.n)));
    }
    if let Some(&bad) = class_ids.iter().find(|&&c| c >= nc) {
        return Err(Error::ClassOutOfRange {
            class_id: bad,
            num_classes: nc,
        });
    }
    let labels: Arc<[u32]> = class_ids.iter().map(|&c| c as u32).collect();
    let scale = tape.guided_sample(bank.gamma, labels.clone(), xs.n, 1, 1)?;
    let shift = tape.guided_sample(bank.beta, labels, xs.n, 1, 1)?;
    let xhat = instance_norm(tape, x, eps);
    tape.affine(xhat, scale, shift)
}
