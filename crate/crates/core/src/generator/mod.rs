//! Residual generator conditioned on a segmentation mask through its norm
//! sites, plus the graph description shared with the analyzer.
//!
//! A graph is a list of layers: a linear map from the noise vector, residual
//! blocks interleaved with 2× nearest upsampling, and a final convolution to
//! RGB followed by `tanh`. Each residual block computes
//! `skip(x) + conv₁(act(norm₁(conv₀(act(norm₀(x))))))`, with the mask
//! nearest-downsampled to the block's resolution.

mod model;
mod spec;

pub use model::{build_generator, noise_batch, Forward, GenInput, Model, ModulationTap};
pub use spec::{Activation, GraphSpec, LayerKind, LayerSpec, NormMode};
