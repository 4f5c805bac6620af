use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::instance_norm;
use crate::layers::EPS;
use crate::real::Real;
use crate::tensor::{Shape, Tape, Tensor, Var};

const SLOPE: f64 = 0.2;

/// Patch discriminator on `image ⊕ one-hot mask`: three stride-2 4×4 convs
/// (instance norm after the second and third) and a 3×3 conv to one logit
/// per patch.
#[derive(Clone, Debug)]
pub struct Discriminator {
    params: BTreeMap<String, Tensor<f32>>,
}

/// `(cin, cout, k, stride, pad, norm)`
fn layers(num_classes: usize, width: usize) -> [(usize, usize, usize, usize, usize, bool); 4] {
    [
        (3 + num_classes, width, 4, 2, 1, false),
        (width, 2 * width, 4, 2, 1, true),
        (2 * width, 4 * width, 4, 2, 1, true),
        (4 * width, 1, 3, 1, 1, false),
    ]
}

impl Discriminator {
    pub fn new(num_classes: usize, width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for (i, (cin, cout, k, ..)) in layers(num_classes, width).into_iter().enumerate() {
            let bound = 1.0 / ((cin * k * k) as f32).sqrt();
            let w = Tensor::from_fn(Shape::new(cout, cin, k, k), |_, _, _, _| rng.random_range(-bound..bound));
            params.insert(format!("{i}.weight"), w);
            params.insert(format!("{i}.bias"), Tensor::zeros(Shape::new(1, cout, 1, 1)));
        }
        Discriminator { params }
    }

    fn num_classes(&self) -> usize {
        self.params["0.weight"].shape().c - 3
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<f32>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor<f32>> {
        &mut self.params
    }

    /// Patch logits for `image` (`N×3×H×W`) under `onehot` (`N×N_c×H×W`).
    /// With `trainable` the weights are tape parameters and returned by path;
    /// otherwise they enter as constants and gradients only reach the inputs.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        image: Var,
        onehot: Var,
        trainable: bool,
    ) -> Result<(Var, BTreeMap<String, Var>)> {
        let mut vars = BTreeMap::new();
        for (k, v) in &self.params {
            let var = if trainable { tape.param(v.cast()) } else { tape.constant(v.cast()) };
            vars.insert(k.clone(), var);
        }
        let mut x = tape.concat_channels(image, onehot)?;
        let spec = layers(self.num_classes(), self.params["0.weight"].shape().n);
        for (i, &(_, _, _, stride, pad, norm)) in spec.iter().enumerate() {
            x = tape.conv2d(x, vars[&format!("{i}.weight")], Some(vars[&format!("{i}.bias")]), stride, pad)?;
            if norm {
                x = instance_norm(tape, x, EPS);
            }
            if i + 1 < spec.len() {
                x = tape.leaky_relu(x, SLOPE);
            }
        }
        Ok((x, vars))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_logits_shape() {
        let d = Discriminator::new(5, 8, 0);
        let mut tape = Tape::<f32>::new();
        let img = tape.constant(Tensor::zeros(Shape::new(2, 3, 32, 32)));
        let oh = tape.constant(Tensor::zeros(Shape::new(2, 5, 32, 32)));
        let (out, vars) = d.forward(&mut tape, img, oh, true).unwrap();
        assert_eq!(tape.shape(out), Shape::new(2, 1, 4, 4));
        assert_eq!(vars.len(), 8);
    }
}
