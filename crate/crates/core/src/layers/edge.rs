use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape, Tape, Tensor, Var};

/// `H×W` grid of instance ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceMap {
    h: usize,
    w: usize,
    ids: Vec<u32>,
}

impl InstanceMap {
    pub fn new(h: usize, w: usize, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != h * w {
            return Err(Error::shape("instance map", format!("{} ids for {h}x{w}", ids.len())));
        }
        Ok(InstanceMap { h, w, ids })
    }

    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> u32) -> Self {
        let ids = (0..h).flat_map(|i| (0..w).map(move |j| (i, j))).map(|(i, j)| f(i, j)).collect();
        InstanceMap { h, w, ids }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.ids[i * self.w + j]
    }
}

/// Binary edge map `1×1×H×W`: 1 where any in-bounds 4-neighbour carries a
/// different instance id.
pub fn edge_map<T: Real>(inst: &InstanceMap) -> Tensor<T> {
    let (h, w) = (inst.h, inst.w);
    Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, i, j| {
        let id = inst.get(i, j);
        let differs = (i > 0 && inst.get(i - 1, j) != id)
            || (i + 1 < h && inst.get(i + 1, j) != id)
            || (j > 0 && inst.get(i, j - 1) != id)
            || (j + 1 < w && inst.get(i, j + 1) != id);
        if differs {
            T::ONE
        } else {
            T::ZERO
        }
    })
}

/// Learned scalars of the edge modulation `Ê = γ_c·E + β_c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeModParams {
    pub gamma: f32,
    pub beta: f32,
}

impl Default for EdgeModParams {
    fn default() -> Self {
        EdgeModParams {
            gamma: 1.0,
            beta: 0.0,
        }
    }
}

impl EdgeModParams {
    /// Modulated edge map of one instance map, outside any tape.
    pub fn modulate(&self, inst: &InstanceMap) -> Tensor<f32> {
        edge_map::<f32>(inst).map(|e| self.gamma * e + self.beta)
    }
}

/// `Ê = γ_c·E + β_c` on a tape, with `gamma`/`beta` as `1×1×1×1` values and
/// `edges` as `N×1×H×W`.
pub fn edge_modulate<T: Real>(tape: &mut Tape<T>, edges: Var, gamma: Var, beta: Var) -> Result<Var> {
    let es = tape.shape(edges);
    if es.c != 1 {
        return Err(Error::shape("edge_modulate", format!("edge map must have one channel, got {es}")));
    }
    tape.affine(edges, gamma, beta)
}
