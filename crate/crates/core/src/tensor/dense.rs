use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Fully-connected weights: `weights` is `in_features × out_features`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DenseParams<T> {
    pub weights: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub weights: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

fn dims<T: Scalar>(input: &Tensor<T>, params: &DenseParams<T>) -> Result<(usize, usize, usize)> {
    let batch = input.shape()[0];
    let features = input.len() / batch;
    let [rows, units] = params.weights.shape()[..] else {
        return Err(Error::InvalidArgument(format!(
            "dense weights must be 2-D, got {:?}",
            params.weights.shape()
        )));
    };
    if rows != features {
        return Err(Error::shape("dense (input vs weights)", input.shape(), params.weights.shape()));
    }
    if let Some(b) = &params.bias {
        if b.shape() != [units] {
            return Err(Error::shape("dense (bias vs units)", b.shape(), &[units]));
        }
    }
    Ok((batch, features, units))
}

/// Affine map `x·W + b` on the flattened trailing dimensions; output is `batch × units`.
pub fn dense_forward<T: Scalar>(input: &Tensor<T>, params: &DenseParams<T>) -> Result<Tensor<T>> {
    let (batch, features, units) = dims(input, params)?;
    let mut out = vec![T::zero(); batch * units];
    if let Some(b) = &params.bias {
        for row in out.chunks_exact_mut(units) {
            row.copy_from_slice(b.data());
        }
    }
    T::gemm(
        batch,
        features,
        units,
        T::one(),
        input.data(),
        (features as isize, 1),
        params.weights.data(),
        (units as isize, 1),
        T::one(),
        &mut out,
        (units as isize, 1),
    );
    Tensor::new(vec![batch, units], out)?.ensure_finite("dense forward")
}

pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &DenseParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, DenseGrads<T>)> {
    let (batch, features, units) = dims(input, params)?;
    if grad_out.len() != batch * units {
        return Err(Error::shape("dense backward", grad_out.shape(), &[batch, units]));
    }
    let dy = grad_out.data();
    let mut dw = vec![T::zero(); features * units];
    T::gemm(
        features,
        batch,
        units,
        T::one(),
        input.data(),
        (1, features as isize),
        dy,
        (units as isize, 1),
        T::zero(),
        &mut dw,
        (units as isize, 1),
    );
    let mut dx = vec![T::zero(); batch * features];
    T::gemm(
        batch,
        units,
        features,
        T::one(),
        dy,
        (units as isize, 1),
        params.weights.data(),
        (1, units as isize),
        T::zero(),
        &mut dx,
        (features as isize, 1),
    );
    let db = params.bias.as_ref().map(|_| {
        let mut acc = vec![T::zero(); units];
        for row in dy.chunks_exact(units) {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        acc
    });
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?.ensure_finite("dense backward")?,
        DenseGrads {
            weights: Tensor::new(vec![features, units], dw)?,
            bias: db.map(|b| Tensor::new(vec![units], b)).transpose()?,
        },
    ))
}

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes gradient only where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape("relu backward", grad_out.shape(), input.shape()));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_reproduce_input() {
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap();
        let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let p = DenseParams {
            weights: eye,
            bias: Some(Tensor::zeros(&[3])),
        };
        assert_eq!(dense_forward(&x, &p).unwrap(), x);
    }

    #[test]
    fn flattens_spatial_input() {
        let x = Tensor::<f64>::full(&[2, 1, 1, 4], 1.0);
        let p = DenseParams {
            weights: Tensor::full(&[4, 3], 0.5),
            bias: Some(Tensor::full(&[3], 1.0)),
        };
        let y = dense_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert!(y.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn mismatched_features_error() {
        let x = Tensor::<f64>::zeros(&[1, 5]);
        let p = DenseParams {
            weights: Tensor::zeros(&[4, 3]),
            bias: None,
        };
        assert!(matches!(dense_forward(&x, &p), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn relu_clamps_and_masks() {
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &Tensor::full(&[3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }
}
