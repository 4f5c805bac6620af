use crate::error::Result;
use crate::real::Real;
use crate::tensor::{Tape, Var};

/// Mean absolute error.
pub fn l1<T: Real>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    let d = tape.sub(pred, target)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

/// `mean(relu(1 − real)) + mean(relu(1 + fake))`.
pub fn hinge_d<T: Real>(tape: &mut Tape<T>, real: Var, fake: Var) -> Result<Var> {
    let r = tape.scale(real, -1.0);
    let r = tape.add_scalar(r, 1.0);
    let r = tape.relu(r);
    let r = tape.mean(r);
    let f = tape.add_scalar(fake, 1.0);
    let f = tape.relu(f);
    let f = tape.mean(f);
    tape.add(r, f)
}

/// `−mean(fake)`.
pub fn hinge_g<T: Real>(tape: &mut Tape<T>, fake: Var) -> Var {
    let m = tape.mean(fake);
    tape.scale(m, -1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(1, 1, 1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn values() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(t(&[0.5, -1.0, 2.0]));
        let b = tape.constant(t(&[0.0, 0.0, 0.0]));
        let l = l1(&mut tape, a, b).unwrap();
        assert!((tape.value(l).item().unwrap() - 3.5 / 3.0).abs() < 1e-12);

        let real = tape.constant(t(&[2.0, 0.0]));
        let fake = tape.constant(t(&[-2.0, 0.5]));
        let d = hinge_d(&mut tape, real, fake).unwrap();
        // real: relu(−1)=0, relu(1)=1 → 0.5; fake: relu(−1)=0, relu(1.5) → 0.75
        assert!((tape.value(d).item().unwrap() - 1.25).abs() < 1e-12);
        let g = hinge_g(&mut tape, fake);
        assert!((tape.value(g).item().unwrap() + 0.5 * (-1.5)).abs() < 1e-12);
    }
}
