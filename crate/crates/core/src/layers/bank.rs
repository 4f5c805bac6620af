use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape, Tape, Tensor, Var};

/// Per-class, per-channel modulation scales `Γ` and shifts `B`.
///
/// Stored as `N_c×C×1×1` tensors so they can be registered on a tape directly.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBank {
    pub gamma: Tensor<f32>,
    pub beta: Tensor<f32>,
}

/// A bank recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BankVars {
    pub gamma: Var,
    pub beta: Var,
}

impl ParamBank {
    /// Identity modulation: `Γ = 1`, `B = 0`.
    pub fn new(num_classes: usize, channels: usize) -> Self {
        let shape = Self::shape_for(num_classes, channels);
        ParamBank {
            gamma: Tensor::ones(shape),
            beta: Tensor::zeros(shape),
        }
    }

    /// Same `(γ, β)` for every class, i.e. plain channel-wise modulation.
    pub fn class_uniform(num_classes: usize, scale: &[f32], shift: &[f32]) -> Result<Self> {
        if scale.len() != shift.len() {
            return Err(Error::shape("bank", format!("{} scales vs {} shifts", scale.len(), shift.len())));
        }
        let shape = Self::shape_for(num_classes, scale.len());
        Ok(ParamBank {
            gamma: Tensor::from_fn(shape, |_, k, _, _| scale[k]),
            beta: Tensor::from_fn(shape, |_, k, _, _| shift[k]),
        })
    }

    pub fn shape_for(num_classes: usize, channels: usize) -> Shape {
        Shape::new(num_classes, channels, 1, 1)
    }

    pub fn num_classes(&self) -> usize {
        self.gamma.shape().n
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape().c
    }

    pub fn gamma_at(&self, class: usize, channel: usize) -> f32 {
        self.gamma.at(class, channel, 0, 0)
    }

    pub fn beta_at(&self, class: usize, channel: usize) -> f32 {
        self.beta.at(class, channel, 0, 0)
    }

    pub fn set(&mut self, class: usize, channel: usize, gamma: f32, beta: f32) {
        self.gamma.set(class, channel, 0, 0, gamma);
        self.beta.set(class, channel, 0, 0, beta);
    }

    pub fn register<T: Real>(&self, tape: &mut Tape<T>) -> BankVars {
        BankVars {
            gamma: tape.param(self.gamma.cast()),
            beta: tape.param(self.beta.cast()),
        }
    }

    pub fn num_params(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    /// `u32 N_c`, `u32 C`, then `Γ` and `B` as little-endian `f32`.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.num_params());
        out.extend_from_slice(&(self.num_classes() as u32).to_le_bytes());
        out.extend_from_slice(&(self.channels() as u32).to_le_bytes());
        for v in self.gamma.data().iter().chain(self.beta.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Self> {
        let word = |i: usize| -> Result<[u8; 4]> {
            bytes
                .get(4 * i..4 * i + 4)
                .map(|s| s.try_into().expect("4 bytes"))
                .ok_or_else(|| Error::Format("truncated parameter bank".into()))
        };
        let nc = u32::from_le_bytes(word(0)?) as usize;
        let c = u32::from_le_bytes(word(1)?) as usize;
        let count = nc * c;
        if bytes.len() != 8 + 8 * count {
            return Err(Error::Format(format!("bank of {nc}x{c} needs {} bytes, got {}", 8 + 8 * count, bytes.len())));
        }
        let floats = (0..2 * count)
            .map(|i| word(2 + i).map(f32::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        let shape = Self::shape_for(nc, c);
        Ok(ParamBank {
            gamma: Tensor::from_vec(shape, floats[..count].to_vec())?,
            beta: Tensor::from_vec(shape, floats[count..].to_vec())?,
        })
    }
}
