//! Central-difference verification of analytic backward passes.
//!
//! The checked op is reduced to the scalar `L = Σ forward(inputs) ⊙ R` with a
//! seeded random probe `R`; the analytic gradient is `backward(inputs, R)` and
//! the numeric one `(L(x + ε) − L(x − ε)) / 2ε` per coordinate.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    avgpool2d_backward, avgpool2d_forward, batchnorm_backward, batchnorm_forward, conv2d_backward,
    conv2d_forward, dense_backward, dense_forward, global_avgpool_backward, global_avgpool_forward,
    maxpool2d_backward, maxpool2d_forward, relu_backward, relu_forward, softmax_cross_entropy,
    BatchNormParams, ConvParams, DenseParams, Mode, Padding, Tensor,
};
use crate::error::{Error, Result};

/// A layer viewed as a function of a list of 64-bit tensors (data and parameters alike).
pub trait Differentiable {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>>;

    /// One gradient per input, each shaped like its input.
    fn backward(&self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Result<Vec<Tensor<f64>>>;
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Coordinates checked per input; larger inputs are subsampled with `seed`.
    pub max_coords: usize,
    pub seed: u64,
    /// Gradients smaller than this are compared in absolute rather than relative terms.
    pub magnitude_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            max_coords: 256,
            seed: 0,
            magnitude_floor: 1e-4,
        }
    }
}

fn probe_objective(out: &Tensor<f64>, probe: &Tensor<f64>) -> f64 {
    out.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
}

/// Worst `|analytic − numeric| / max(|analytic|, |numeric|, floor)` over the checked coordinates.
pub fn gradient_check(op: &dyn Differentiable, inputs: &[Tensor<f64>], opts: &GradCheckOptions) -> Result<f64> {
    if !(1e-5..=1e-2).contains(&opts.epsilon) {
        return Err(Error::InvalidArgument(format!(
            "gradient_check epsilon {} outside [1e-5, 1e-2]",
            opts.epsilon
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let out = op.forward(inputs)?;
    let probe = Tensor::from_fn(out.shape(), |_| rng.random_range(-1.0..1.0));
    let analytic = op.backward(inputs, &probe)?;
    if analytic.len() != inputs.len() {
        return Err(Error::InvalidArgument(format!(
            "backward returned {} gradients for {} inputs",
            analytic.len(),
            inputs.len()
        )));
    }

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        if grad.shape() != inputs[i].shape() {
            return Err(Error::shape("gradient_check", grad.shape(), inputs[i].shape()));
        }
        let len = inputs[i].len();
        let coords: Vec<usize> = if len <= opts.max_coords {
            (0..len).collect()
        } else {
            let mut picked = index::sample(&mut rng, len, opts.max_coords).into_vec();
            picked.sort_unstable();
            picked
        };
        for j in coords {
            let original = work[i].data()[j];
            work[i].data_mut()[j] = original + opts.epsilon;
            let plus = probe_objective(&op.forward(&work)?, &probe);
            work[i].data_mut()[j] = original - opts.epsilon;
            let minus = probe_objective(&op.forward(&work)?, &probe);
            work[i].data_mut()[j] = original;

            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            let a = grad.data()[j];
            let denom = a.abs().max(numeric.abs()).max(opts.magnitude_floor);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

fn expect_inputs(op: &str, inputs: &[Tensor<f64>], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(Error::InvalidArgument(format!("{op} expects {n} inputs, got {}", inputs.len())));
    }
    Ok(())
}

/// Inputs: `[x, kernel]` or `[x, kernel, bias]`.
#[derive(Debug, Clone)]
pub struct Conv2dOp {
    pub stride: usize,
    pub padding: Padding,
    pub bias: bool,
}

impl Conv2dOp {
    fn params(&self, inputs: &[Tensor<f64>]) -> Result<ConvParams<f64>> {
        expect_inputs("conv2d", inputs, if self.bias { 3 } else { 2 })?;
        Ok(ConvParams {
            kernel: inputs[1].clone(),
            bias: self.bias.then(|| inputs[2].clone()),
        })
    }
}

impl Differentiable for Conv2dOp {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        conv2d_forward(&inputs[0], &self.params(inputs)?, self.stride, self.padding)
    }

    fn backward(&self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (dx, g) = conv2d_backward(&inputs[0], &self.params(inputs)?, self.stride, self.padding, grad_out)?;
        Ok(std::iter::once(dx).chain(Some(g.kernel)).chain(g.bias).collect())
    }
}

/// Inputs: `[x, weights]` or `[x, weights, bias]`.
#[derive(Debug, Clone)]
pub struct DenseOp {
    pub bias: bool,
}

impl DenseOp {
    fn params(&self, inputs: &[Tensor<f64>]) -> Result<DenseParams<f64>> {
        expect_inputs("dense", inputs, if self.bias { 3 } else { 2 })?;
        Ok(DenseParams {
            weights: inputs[1].clone(),
            bias: self.bias.then(|| inputs[2].clone()),
        })
    }
}

impl Differentiable for DenseOp {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        dense_forward(&inputs[0], &self.params(inputs)?)
    }

    fn backward(&self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (dx, g) = dense_backward(&inputs[0], &self.params(inputs)?, grad_out)?;
        Ok(std::iter::once(dx).chain(Some(g.weights)).chain(g.bias).collect())
    }
}

#[derive(Debug, Clone)]
pub struct ReluOp;

impl Differentiable for ReluOp {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        expect_inputs("relu", inputs, 1)?;
        Ok(relu_forward(&inputs[0]))
    }

    fn backward(&self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(vec![relu_backward(&inputs[0], grad_out)?])
    }
}

#[derive(Debug, Clone)]
pub struct MaxPoolOp {
    pub window: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Differentiable for MaxPoolOp {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        expect_inputs("maxpool2d", inputs, 1)?;
        maxpool2d_forward(&inputs[0], self.window, self.stride, self.pad)
    }

    fn backward(&self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(vec![maxpool2d_backward(&inputs[0], self.window, self.stride, self.pad, grad_out)?])
    }
}

#[derive(Debug, Clone)]
pub struct AvgPoolOp {
    pub window: usize,
    pub stride: usize,
}

impl Differentiable for AvgPoolOp {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        expect_inputs("avgpool2d", inputs, 1)?;
        avgpool2d_forward(&inputs[0], self.window, self.stride)
    }

    fn backward(&self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(vec![avgpool2d_backward(&inputs[0], self.window, self.stride, grad_out)?])
    }
}

#[derive(Debug, Clone)]
pub struct GlobalAvgPoolOp;

impl Differentiable for GlobalAvgPoolOp {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        expect_inputs("global_avgpool", inputs, 1)?;
        global_avgpool_forward(&inputs[0])
    }

    fn backward(&self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(vec![global_avgpool_backward(&inputs[0], grad_out)?])
    }
}

/// Inputs: `[x, gamma, beta]`; running statistics are fixed by `template`.
#[derive(Debug, Clone)]
pub struct BatchNormOp {
    pub mode: Mode,
    pub template: BatchNormParams<f64>,
}

impl BatchNormOp {
    fn params(&self, inputs: &[Tensor<f64>]) -> Result<BatchNormParams<f64>> {
        expect_inputs("batchnorm", inputs, 3)?;
        let mut p = self.template.clone();
        p.gamma = inputs[1].clone();
        p.beta = inputs[2].clone();
        Ok(p)
    }
}

impl Differentiable for BatchNormOp {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(batchnorm_forward(&inputs[0], &self.params(inputs)?, self.mode)?.output)
    }

    fn backward(&self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let p = self.params(inputs)?;
        let fwd = batchnorm_forward(&inputs[0], &p, self.mode)?;
        let (dx, dg, db) = batchnorm_backward(&inputs[0], &p, &fwd.cache, grad_out)?;
        Ok(vec![dx, dg, db])
    }
}

/// Inputs: `[logits]`; output is the scalar loss as a 1-element tensor.
#[derive(Debug, Clone)]
pub struct SoftmaxCrossEntropyOp {
    pub labels: Tensor<f64>,
}

impl Differentiable for SoftmaxCrossEntropyOp {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        expect_inputs("softmax_cross_entropy", inputs, 1)?;
        let (loss, _) = softmax_cross_entropy(&inputs[0], &self.labels)?;
        Tensor::new(vec![1], vec![loss])
    }

    fn backward(&self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (_, mut grad) = softmax_cross_entropy(&inputs[0], &self.labels)?;
        grad.scale(grad_out.data()[0]);
        Ok(vec![grad])
    }
}
