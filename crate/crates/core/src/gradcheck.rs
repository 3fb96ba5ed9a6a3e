//! Central finite-difference verification of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-4;

/// Compares the tape gradient of `sum(op(input))` against central differences
/// at every coordinate of `input`. Returns the maximum relative error, with
/// `max(|analytic|, |numeric|, 1e-8)` as the denominator.
pub fn gradient_check<F>(op: F, input: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..input.len()).collect();
    gradient_check_at(op, input, &coords)
}

/// Like [`gradient_check`] but only probes the listed coordinates.
pub fn gradient_check_at<F>(op: F, input: &Tensor, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |x: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone());
        let y = op(&mut tape, v)?;
        Ok(tape.value(y).sum())
    };

    let mut tape = Tape::new();
    let v = tape.leaf(input.clone());
    let y = op(&mut tape, v)?;
    let s = tape.sum(y);
    let grads = tape.backward(s);
    let analytic = grads
        .get(v)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; input.len()]);

    let mut worst: f64 = 0.0;
    let mut probe = input.clone();
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - FD_STEP;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Activation, LossKind};
    use crate::rng::SeededRng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = SeededRng::new(seed);
        let n = shape.iter().product();
        Tensor::new(
            (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
            shape.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn linear_map_is_exact() {
        let x = random(&[6], 1);
        let err = gradient_check(|t, v| Ok(t.scale(v, 3.0)), &x).unwrap();
        assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn matmul_both_sides() {
        let a = random(&[3, 4], 2);
        let b = random(&[4, 5], 3);
        let bb = b.clone();
        let err = gradient_check(
            move |t, v| {
                let w = t.leaf(bb.clone());
                t.matmul(v, w)
            },
            &a,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
        let err = gradient_check(
            move |t, v| {
                let x = t.leaf(a.clone());
                t.matmul(x, v)
            },
            &b,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn elementwise_primitives() {
        let x = random(&[3, 4], 4);
        for kind in [Activation::Sigmoid, Activation::Tanh] {
            let err = gradient_check(|t, v| t.activation(v, kind), &x).unwrap();
            assert!(err < 1e-4, "{kind:?}: {err}");
        }
        // relu away from the kink
        let away = x.map(|v| if v.abs() < 1e-2 { 0.5 } else { v });
        let err = gradient_check(|t, v| t.activation(v, Activation::Relu), &away).unwrap();
        assert!(err < 1e-4, "relu: {err}");
    }

    #[test]
    fn softmax_with_weighted_sum() {
        // sum of softmax rows is constant, so weight the output to get a
        // non-trivial gradient
        let x = random(&[2, 3], 9);
        let weights = random(&[2, 3], 10);
        let err = gradient_check(
            |t, v| {
                let s = t.activation(v, Activation::Softmax)?;
                let w = t.leaf(weights.clone());
                t.mul(s, w)
            },
            &x,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn losses() {
        let pred = random(&[3, 2], 5).map(|v| 0.5 + 0.4 * v);
        let gold = random(&[3, 2], 6);
        let err =
            gradient_check(|t, v| t.loss(v, &gold, LossKind::MeanSquaredError), &pred).unwrap();
        assert!(err < 1e-6, "mse: {err}");

        let logits = random(&[3, 4], 7);
        let onehot = Tensor::from_rows(&[
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
        ])
        .unwrap();
        let err = gradient_check(
            |t, v| {
                let p = t.activation(v, Activation::Softmax)?;
                t.loss(p, &onehot, LossKind::CategoricalCrossEntropy)
            },
            &logits,
        )
        .unwrap();
        assert!(err < 1e-4, "ce: {err}");
    }

    #[test]
    fn sequence_ops() {
        let x = random(&[2 * 5, 3], 8);
        let mismatched = gradient_check(
            |t, v| {
                let u = t.unfold(v, 2, 5, 2)?;
                t.concat_cols(&[u, v])
            },
            &x,
        );
        assert!(mismatched.is_err());

        let err = gradient_check(
            |t, v| {
                let u = t.unfold(v, 2, 5, 2)?;
                let s = t.slice_time(u, 2, 4, 1, 3)?;
                let p = t.pad_time_front(s, 2, 3, 4)?;
                let c = t.slice_cols(p, 1, 4)?;
                let c2 = t.concat_cols(&[c, c])?;
                t.activation(c2, Activation::Tanh)
            },
            &x,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
