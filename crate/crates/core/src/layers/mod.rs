//! The conditional normalization family: batch and instance normalization,
//! conditional instance normalization, SPADE, CLADE with guided sampling and
//! the instance-edge modulation path.
//!
//! Every layer splits into a normalization step (`x̂ = (x − μ)/σ`) and a
//! modulation step (`γ·x̂ + β`); the layers differ only in where `μ, σ` and
//! `γ, β` come from.

mod bank;
mod clade;
mod edge;
mod mask;
mod norm;
mod spade;

pub use bank::{BankVars, ParamBank};
pub use clade::{clade_forward, conditional_in, guided_sample};
pub use edge::{edge_map, edge_modulate, EdgeModParams, InstanceMap};
pub use mask::{LabelBatch, SegmentationMask};
pub use norm::{batch_norm, instance_norm, normalize_batch, NormStats, EPS};
pub use spade::{spade_forward, spade_modulation, SpadeBlockParams, SpadeVars};
