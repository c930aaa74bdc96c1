use serde::{Deserialize, Serialize};

use super::{Mode, Scalar, Tensor};
use crate::error::{Error, Result};

/// Per-channel batch-normalization state.
///
/// `momentum` is the weight of the newest batch statistic in the running
/// average: `running = (1 − momentum)·running + momentum·batch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BatchNormParams<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl<T: Scalar> BatchNormParams<T> {
    pub const DEFAULT_EPSILON: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    /// gamma = 1, beta = 0, running mean 0, running variance 1.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            epsilon: Self::DEFAULT_EPSILON,
            momentum: Self::DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    // negated comparisons so NaN is rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn validate(&self, channels: usize) -> Result<()> {
        for (name, t) in [
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ] {
            if t.shape() != [channels] {
                return Err(Error::shape(format!("batchnorm ({name} vs channels)"), t.shape(), &[channels]));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("batchnorm epsilon must be positive".into()));
        }
        if self.running_var.data().iter().any(|&v| !(v > T::zero())) {
            return Err(Error::InvalidArgument("batchnorm running_var must be strictly positive".into()));
        }
        Ok(())
    }

    /// Folds one batch's statistics into the running averages.
    pub fn update_running(&mut self, stats: &BatchStats<T>) {
        let m = T::from_f64(self.momentum);
        let keep = T::one() - m;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(stats.mean.data()) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(stats.var.data()) {
            *r = keep * *r + m * b;
        }
    }
}

/// Batch mean and unbiased variance per channel, produced in train mode.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

/// What the backward pass needs: the centering and scaling actually applied.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub mode: Mode,
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNormOutput<T> {
    pub output: Tensor<T>,
    pub cache: BatchNormCache<T>,
    pub stats: Option<BatchStats<T>>,
}

fn channels_of<T: Scalar>(input: &Tensor<T>) -> Result<(usize, usize)> {
    let (n, h, w, c) = input.dims4("batchnorm")?;
    Ok((n * h * w, c))
}

/// Batch normalization over N, H and W per channel. Does not mutate `params`;
/// apply the returned train-mode statistics with [`BatchNormParams::update_running`].
pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor<T>,
    params: &BatchNormParams<T>,
    mode: Mode,
) -> Result<BatchNormOutput<T>> {
    let (count, c) = channels_of(input)?;
    params.validate(c)?;
    let x = input.data();
    let eps = params.epsilon;

    let (mean, inv_std, stats) = match mode {
        Mode::Train => {
            let batch = input.shape()[0];
            if batch < 2 {
                return Err(Error::InvalidArgument(
                    "batchnorm in train mode needs a batch of at least 2".into(),
                ));
            }
            let mut sum = vec![0.0f64; c];
            for px in x.chunks_exact(c) {
                for (s, &v) in sum.iter_mut().zip(px) {
                    *s += v.as_f64();
                }
            }
            let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
            let mut sq = vec![0.0f64; c];
            for px in x.chunks_exact(c) {
                for ((s, &v), &mu) in sq.iter_mut().zip(px).zip(&mean) {
                    let d = v.as_f64() - mu;
                    *s += d * d;
                }
            }
            let var: Vec<f64> = sq.iter().map(|s| s / count as f64).collect();
            let unbiased = count as f64 / (count as f64 - 1.0).max(1.0);
            let stats = BatchStats {
                mean: Tensor::new(vec![c], mean.iter().map(|&v| T::from_f64(v)).collect())?,
                var: Tensor::new(vec![c], var.iter().map(|&v| T::from_f64(v * unbiased)).collect())?,
            };
            let inv_std: Vec<T> = var.iter().map(|&v| T::from_f64(1.0 / (v + eps).sqrt())).collect();
            (mean.into_iter().map(T::from_f64).collect::<Vec<T>>(), inv_std, Some(stats))
        }
        Mode::Inference => {
            let inv_std = params
                .running_var
                .data()
                .iter()
                .map(|&v| T::from_f64(1.0 / (v.as_f64() + eps).sqrt()))
                .collect();
            (params.running_mean.data().to_vec(), inv_std, None)
        }
    };

    let gamma = params.gamma.data();
    let beta = params.beta.data();
    let mut out = Vec::with_capacity(x.len());
    for px in x.chunks_exact(c) {
        for ch in 0..c {
            out.push(gamma[ch] * (px[ch] - mean[ch]) * inv_std[ch] + beta[ch]);
        }
    }
    let output = Tensor::new(input.shape().to_vec(), out)?.ensure_finite("batchnorm forward")?;
    Ok(BatchNormOutput {
        output,
        cache: BatchNormCache { mode, mean, inv_std },
        stats,
    })
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batchnorm_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &BatchNormParams<T>,
    cache: &BatchNormCache<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (count, c) = channels_of(input)?;
    if grad_out.shape() != input.shape() {
        return Err(Error::shape("batchnorm backward", grad_out.shape(), input.shape()));
    }
    let x = input.data();
    let dy = grad_out.data();
    let gamma = params.gamma.data();

    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for (px, gy) in x.chunks_exact(c).zip(dy.chunks_exact(c)) {
        for ch in 0..c {
            let xhat = ((px[ch] - cache.mean[ch]) * cache.inv_std[ch]).as_f64();
            dgamma[ch] += gy[ch].as_f64() * xhat;
            dbeta[ch] += gy[ch].as_f64();
        }
    }

    let mut dx = Vec::with_capacity(x.len());
    match cache.mode {
        Mode::Train => {
            let m = count as f64;
            let scale: Vec<f64> = (0..c)
                .map(|ch| gamma[ch].as_f64() * cache.inv_std[ch].as_f64() / m)
                .collect();
            for (px, gy) in x.chunks_exact(c).zip(dy.chunks_exact(c)) {
                for ch in 0..c {
                    let xhat = ((px[ch] - cache.mean[ch]) * cache.inv_std[ch]).as_f64();
                    let v = scale[ch] * (m * gy[ch].as_f64() - dbeta[ch] - xhat * dgamma[ch]);
                    dx.push(T::from_f64(v));
                }
            }
        }
        Mode::Inference => {
            for gy in dy.chunks_exact(c) {
                for ch in 0..c {
                    dx.push(gy[ch] * gamma[ch] * cache.inv_std[ch]);
                }
            }
        }
    }
    let to_t = |v: Vec<f64>| Tensor::new(vec![c], v.into_iter().map(T::from_f64).collect());
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?.ensure_finite("batchnorm backward")?,
        to_t(dgamma)?,
        to_t(dbeta)?,
    ))
}
