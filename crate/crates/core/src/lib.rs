//! Conditional normalization for semantic image synthesis.
//!
//! The crate provides a small reverse-mode autodiff engine over `N×C×H×W`
//! tensors ([`tensor`]) and the normalization family built on it: batch and
//! instance normalization, conditional instance normalization, SPADE and
//! class-adaptive denormalization (CLADE) with guided sampling ([`layers`]).
//! On top sit a residual generator driven by a noise vector ([`generator`]), a static
//! parameter/FLOPs analyzer ([`analysis`]), a desk-scale training harness on
//! procedural segmentation data ([`training`]), and the file formats used by
//! the command-line tool ([`io`]).

pub mod analysis;
pub mod error;
pub mod generator;
pub mod io;
pub mod layers;
pub mod par;
pub mod real;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{Shape, Tape, Tensor, Var};
