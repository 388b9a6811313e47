//! Tensor-level activations and inverted dropout, outside of any tape.

use rand::Rng;

use crate::autodiff::{softmax_rows, Activation};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::Tensor;

/// Default negative slope for LeakyReLU in the graph attention logits.
pub const LEAKY_SLOPE: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
    Relu,
    Elu,
    LeakyRelu(f64),
    /// Softmax along an axis of a rank-2 tensor (0 = down columns, 1 = along rows).
    Softmax(usize),
}

pub fn activation(kind: ActivationKind, x: &Tensor) -> Result<Tensor> {
    if !x.all_finite() {
        return Err(Error::NonFinite { op: "activation input" });
    }
    let elementwise = |a: Activation| Ok(x.map(|v| a.apply(v)));
    match kind {
        ActivationKind::Sigmoid => elementwise(Activation::Sigmoid),
        ActivationKind::Tanh => elementwise(Activation::Tanh),
        ActivationKind::Relu => elementwise(Activation::Relu),
        ActivationKind::Elu => elementwise(Activation::Elu),
        ActivationKind::LeakyRelu(s) => elementwise(Activation::LeakyRelu(s)),
        ActivationKind::Softmax(axis) => match (axis, x.shape().len()) {
            (_, 1) => Ok(softmax_rows(x)),
            (1, 2) => Ok(softmax_rows(x)),
            (0, 2) => Ok(softmax_rows(&x.transpose()).transpose()),
            _ => Err(Error::InvalidArgument(format!(
                "softmax axis {axis} for shape {:?}",
                x.shape()
            ))),
        },
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub fn dropout_mask(shape: &[usize], rate: f64, rng: &mut StreamRng) -> Result<Tensor> {
    check_rate(rate)?;
    let keep = 1.0 - rate;
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { 1.0 / keep })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

pub fn dropout(x: &Tensor, rate: f64, training: bool, rng: &mut StreamRng) -> Result<Tensor> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.shape(), rate, rng)?;
    Ok(x.zip_map(&mask, |a, m| a * m))
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("dropout rate {rate} not in [0, 1)")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    fn t(v: &[f64]) -> Tensor {
        Tensor::row(v.to_vec())
    }

    #[test]
    fn scalar_activations() {
        let a = activation(ActivationKind::LeakyRelu(LEAKY_SLOPE), &t(&[-2.0])).unwrap();
        assert!((a.item() + 0.6).abs() < 1e-15);
        assert_eq!(activation(ActivationKind::Elu, &t(&[0.0])).unwrap().item(), 0.0);
        assert_eq!(activation(ActivationKind::Relu, &t(&[-1.0])).unwrap().item(), 0.0);
    }

    #[test]
    fn softmax_matches_direct_exponentiation() {
        let x = [1.0f64, 2.0, 3.0];
        let z: f64 = x.iter().map(|v| v.exp()).sum();
        let oracle: Vec<f64> = x.iter().map(|v| v.exp() / z).collect();
        let s = activation(ActivationKind::Softmax(1), &t(&x)).unwrap();
        for (a, b) in s.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in s.data().iter().zip([0.0900, 0.2447, 0.6652]) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn softmax_column_axis() {
        let x = Tensor::matrix(2, 2, vec![0.0, 5.0, 0.0, 5.0]).unwrap();
        let s = activation(ActivationKind::Softmax(0), &x).unwrap();
        assert!(s.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = SeedStream::new(0).rng();
        let x = t(&[1.0, -2.0, 3.0]);
        assert_eq!(dropout(&x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(dropout(&x, 0.5, false, &mut rng).unwrap(), x);
        assert!(dropout(&x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn inverted_dropout_preserves_mean() {
        let mut rng = SeedStream::new(11).substream("dropout").rng();
        let x = Tensor::full(&[1, 100_000], 1.0);
        let y = dropout(&x, 0.5, true, &mut rng).unwrap();
        let mean = y.sum() / y.len() as f64;
        assert!((0.99..=1.01).contains(&mean), "mean {mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
