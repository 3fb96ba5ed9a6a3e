//! Eager (non-recording) forms of the differentiable primitives.

use crate::autodiff::{check_dropout_rate, Activation, LossKind, Tape};
use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.matmul(b)
}

pub fn activation(x: &Tensor, kind: Activation) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let y = tape.activation(v, kind)?;
    Ok(tape.value(y).clone())
}

pub fn dropout(x: &Tensor, rate: f64, training: bool, rng: &mut SeededRng) -> Result<Tensor> {
    check_dropout_rate(rate)?;
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let y = tape.dropout(v, rate, training, rng)?;
    Ok(tape.value(y).clone())
}

pub fn loss(pred: &Tensor, gold: &Tensor, kind: LossKind) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.leaf(pred.clone());
    let l = tape.loss(p, gold, kind)?;
    Ok(tape.value(l).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero() {
        let y = activation(&Tensor::scalar(0.0), Activation::Sigmoid).unwrap();
        assert_eq!(y.data(), &[0.5]);
    }

    #[test]
    fn softmax_uniform_row() {
        let y = activation(&Tensor::zeros(&[1, 3]), Activation::Softmax).unwrap();
        for &p in y.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let x = Tensor::from_rows(&[vec![1000.0, 1001.0, 999.0]]).unwrap();
        let y = activation(&x, Activation::Softmax).unwrap();
        assert!(y.is_finite());
        assert!((y.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_requires_matrix() {
        assert!(activation(&Tensor::vector(vec![1.0, 2.0]), Activation::Softmax).is_err());
    }

    #[test]
    fn relu_clamps() {
        let y = activation(&Tensor::vector(vec![-2.0, 3.0]), Activation::Relu).unwrap();
        assert_eq!(y.data(), &[0.0, 3.0]);
    }

    #[test]
    fn dropout_identity_cases() {
        let x = Tensor::vector(vec![1.5, -2.0, 3.0]);
        let mut rng = SeededRng::new(0);
        assert_eq!(dropout(&x, 0.25, false, &mut rng).unwrap(), x);
        assert_eq!(dropout(&x, 0.0, true, &mut rng).unwrap(), x);
    }

    #[test]
    fn dropout_rate_validated() {
        let x = Tensor::vector(vec![1.0]);
        let mut rng = SeededRng::new(0);
        assert!(dropout(&x, 1.0, true, &mut rng).is_err());
        assert!(dropout(&x, -0.1, false, &mut rng).is_err());
    }

    #[test]
    fn dropout_survivors_are_rescaled() {
        let x = Tensor::ones(&[1000]);
        let mut rng = SeededRng::new(5);
        let y = dropout(&x, 0.25, true, &mut rng).unwrap();
        for &v in y.data() {
            assert!(v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15);
        }
    }

    #[test]
    fn dropout_preserves_mean() {
        let mut rng = SeededRng::new(11);
        let data: Vec<f64> = (0..100_000).map(|_| rng.uniform(0.5, 1.5)).collect();
        let mean_in = data.iter().sum::<f64>() / 1e5;
        let y = dropout(&Tensor::vector(data), 0.25, true, &mut rng).unwrap();
        let mean_out = y.data().iter().sum::<f64>() / 1e5;
        assert!(
            (mean_out / mean_in - 1.0).abs() < 0.02,
            "{mean_in} {mean_out}"
        );
        let dropped = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
        assert!((dropped - 0.25).abs() < 0.01, "{dropped}");
    }

    #[test]
    fn loss_values() {
        let x = Tensor::from_rows(&[vec![0.3, 0.7]]).unwrap();
        assert_eq!(loss(&x, &x, LossKind::MeanSquaredError).unwrap(), 0.0);
        let p = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(
            loss(&p, &p, LossKind::CategoricalCrossEntropy)
                .unwrap()
                .abs()
                <= 1e-10
        );
        let zero = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let one = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(loss(&zero, &one, LossKind::MeanSquaredError).unwrap(), 1.0);
    }
}
