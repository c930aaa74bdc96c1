use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Row-wise softmax of a `batch × classes` tensor.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, k] = logits.shape()[..] else {
        return Err(Error::InvalidArgument(format!(
            "softmax expects batch × classes, got {:?}",
            logits.shape()
        )));
    };
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| T::from_f64(e / total)));
    }
    Tensor::new(logits.shape().to_vec(), out)?.ensure_finite("softmax")
}

/// Mean softmax cross-entropy over the batch and its gradient `(softmax − onehot) / batch`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if logits.shape() != labels.shape() {
        return Err(Error::shape("softmax_cross_entropy", logits.shape(), labels.shape()));
    }
    let probs = softmax(logits)?;
    let [batch, k] = logits.shape()[..] else { unreachable!() };
    let mut loss = 0.0f64;
    for (r, (lrow, label)) in logits.data().chunks_exact(k).zip(labels.data().chunks_exact(k)).enumerate() {
        let ones = label.iter().filter(|&&v| v == T::one()).count();
        let zeros = label.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || zeros != k - 1 {
            return Err(Error::InvalidArgument(format!("label row {r} is not one-hot")));
        }
        let truth = label.iter().position(|&v| v == T::one()).unwrap_or(0);
        let max = lrow.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let log_sum = lrow.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln() + max;
        loss += log_sum - lrow[truth].as_f64();
    }
    let inv = 1.0 / batch as f64;
    let grad = probs
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&p, &y)| T::from_f64((p.as_f64() - y.as_f64()) * inv))
        .collect();
    let loss = T::from_f64(loss * inv);
    if !loss.is_finite() {
        return Err(Error::NumericFault("softmax_cross_entropy".into()));
    }
    Ok((loss, Tensor::new(logits.shape().to_vec(), grad)?))
}
