#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cxrnet::arch::{
    self, network_gradient_check, Architecture, LayerParams, ModelSpec, NetworkCheckReport, NetworkOp, ParamStore,
    Shape3,
};
use cxrnet::tensor::gradcheck::{
    AvgPoolOp, BatchNormOp, Conv2dOp, DenseOp, GlobalAvgPoolOp, MaxPoolOp, ReluOp, SoftmaxCrossEntropyOp,
};
use cxrnet::tensor::{gradient_check, BatchNormParams, Differentiable, GradCheckOptions, Mode, Padding, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Distinct magnitudes `(k + 0.5) / len` with random signs in random order:
/// no two values are closer than `1 / len` and none is closer to zero than `0.5 / len`.
pub fn spaced(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let len: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..len)
        .map(|k| (k as f64 + 0.5) / len as f64 * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    values.shuffle(rng);
    Tensor::new(shape.to_vec(), values).unwrap()
}

/// Moves biases and BN parameters off their initial constants so that ReLU
/// inputs are not pinned to zero, and gives inference-mode BN non-trivial
/// running statistics.
pub fn jitter(store: &mut ParamStore<f64>, seed: u64) {
    let mut r = rng(seed);
    for layer in store.layers_mut().iter_mut().flatten() {
        match layer {
            LayerParams::Conv(p) => {
                if let Some(b) = &mut p.bias {
                    b.data_mut().iter_mut().for_each(|v| *v += r.random_range(-0.2..0.2));
                }
            }
            LayerParams::Dense(p) => {
                if let Some(b) = &mut p.bias {
                    b.data_mut().iter_mut().for_each(|v| *v += r.random_range(-0.2..0.2));
                }
            }
            LayerParams::BatchNorm(p) => {
                p.gamma.data_mut().iter_mut().for_each(|v| *v += r.random_range(-0.3..0.3));
                p.beta.data_mut().iter_mut().for_each(|v| *v += r.random_range(-0.2..0.2));
                p.running_mean.data_mut().iter_mut().for_each(|v| *v += r.random_range(-0.1..0.1));
                p.running_var.data_mut().iter_mut().for_each(|v| *v *= r.random_range(0.5..2.0));
            }
        }
    }
}

pub fn network_op(arch: Architecture, width_scale: f64, input: usize, mode: Mode, seed: u64) -> NetworkOp {
    let spec = arch::build(arch, Shape3 { h: input, w: input, c: 3 }, 3, width_scale).unwrap();
    let mut template = ParamStore::init(&spec, seed);
    jitter(&mut template, seed ^ 0x5eed);
    NetworkOp { spec, template, mode }
}

/// Kink-aware whole-network check on a 2-sample batch at ε = 1e-5.
pub fn network_check(arch: Architecture, width_scale: f64, input: usize, mode: Mode, seed: u64, per_tensor: usize) -> NetworkCheckReport {
    let op = network_op(arch, width_scale, input, mode, seed);
    let batch = uniform(&[2, input, input, 3], &mut rng(seed), 0.0, 1.0);
    let opts = GradCheckOptions {
        max_coords: per_tensor,
        seed,
        ..Default::default()
    };
    network_gradient_check(&op, &batch, &opts).unwrap()
}

pub fn spec_for(arch: Architecture, width_scale: f64, input: usize) -> ModelSpec {
    arch::build(arch, Shape3 { h: input, w: input, c: 3 }, 3, width_scale).unwrap()
}

fn check(op: &dyn Differentiable, inputs: &[Tensor<f64>], seed: u64) -> f64 {
    let opts = GradCheckOptions {
        seed,
        ..Default::default()
    };
    gradient_check(op, inputs, &opts).unwrap()
}

/// One randomly sized configuration of each layer kind per seed. Returns the
/// worst relative error per layer name over `seeds`.
pub fn layer_sweep(seeds: std::ops::Range<u64>) -> Vec<(&'static str, f64)> {
    let mut worst = vec![
        ("conv2d", 0.0f64),
        ("dense", 0.0),
        ("relu", 0.0),
        ("maxpool", 0.0),
        ("avgpool", 0.0),
        ("global_avgpool", 0.0),
        ("batchnorm_train", 0.0),
        ("batchnorm_inference", 0.0),
        ("softmax_cross_entropy", 0.0),
    ];
    for seed in seeds {
        let errs = layer_errors(seed);
        for (slot, e) in worst.iter_mut().zip(errs) {
            slot.1 = slot.1.max(e);
        }
    }
    worst
}

fn layer_errors(seed: u64) -> [f64; 9] {
    let mut r = rng(seed);
    let n = r.random_range(1..=3);
    let h = r.random_range(3..=8);
    let w = r.random_range(3..=8);
    let c = r.random_range(1..=4);

    let conv = {
        let k = [1, 3, 5][r.random_range(0..3)];
        let stride = r.random_range(1..=3);
        let padding = if r.random_bool(0.5) {
            Padding::Same
        } else {
            Padding::Explicit(r.random_range(0..=2))
        };
        let pad = padding.amount(k);
        let (h, w) = (h.max(k.saturating_sub(2 * pad)), w.max(k.saturating_sub(2 * pad)));
        let cout = r.random_range(1..=4);
        let bias = r.random_bool(0.5);
        let mut inputs = vec![uniform(&[n, h, w, c], &mut r, -1.0, 1.0), uniform(&[k, k, c, cout], &mut r, -1.0, 1.0)];
        if bias {
            inputs.push(uniform(&[cout], &mut r, -1.0, 1.0));
        }
        check(&Conv2dOp { stride, padding, bias }, &inputs, seed)
    };

    let dense = {
        let units = r.random_range(1..=5);
        let bias = r.random_bool(0.5);
        let mut inputs = vec![
            uniform(&[n, h, w, c], &mut r, -1.0, 1.0),
            uniform(&[h * w * c, units], &mut r, -1.0, 1.0),
        ];
        if bias {
            inputs.push(uniform(&[units], &mut r, -1.0, 1.0));
        }
        check(&DenseOp { bias }, &inputs, seed)
    };

    let relu = check(&ReluOp, &[spaced(&[n, h, w, c], &mut r)], seed);

    let maxpool = {
        let window = r.random_range(2..=3);
        let stride = r.random_range(1..=3);
        let pad = r.random_range(0..window);
        check(&MaxPoolOp { window, stride, pad }, &[spaced(&[n, h, w, c], &mut r)], seed)
    };

    let avgpool = {
        let window = r.random_range(1..=3);
        let stride = r.random_range(1..=3);
        check(&AvgPoolOp { window, stride }, &[uniform(&[n, h, w, c], &mut r, -1.0, 1.0)], seed)
    };

    let gap = check(&GlobalAvgPoolOp, &[uniform(&[n, h, w, c], &mut r, -1.0, 1.0)], seed);

    let bn = |mode, r: &mut ChaCha8Rng| {
        let n = n.max(2);
        let mut template = BatchNormParams::new(c);
        template.running_mean = uniform(&[c], r, -0.5, 0.5);
        template.running_var = uniform(&[c], r, 0.5, 2.0);
        let inputs = [
            uniform(&[n, h, w, c], r, -2.0, 2.0),
            uniform(&[c], r, 0.5, 1.5),
            uniform(&[c], r, -0.5, 0.5),
        ];
        check(&BatchNormOp { mode, template }, &inputs, seed)
    };
    let bn_train = bn(Mode::Train, &mut r);
    let bn_inference = bn(Mode::Inference, &mut r);

    let softmax = {
        let k = r.random_range(2..=5);
        let batch = r.random_range(1..=4);
        let mut labels = Tensor::zeros(&[batch, k]);
        for b in 0..batch {
            let class = r.random_range(0..k);
            labels.data_mut()[b * k + class] = 1.0;
        }
        check(&SoftmaxCrossEntropyOp { labels }, &[uniform(&[batch, k], &mut r, -3.0, 3.0)], seed)
    };

    [conv, dense, relu, maxpool, avgpool, gap, bn_train, bn_inference, softmax]
}

/// Conv whose backward reports twice the true input gradient.
pub struct DoubledConv(pub Conv2dOp);

impl Differentiable for DoubledConv {
    fn forward(&self, inputs: &[Tensor<f64>]) -> cxrnet::Result<Tensor<f64>> {
        self.0.forward(inputs)
    }

    fn backward(&self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> cxrnet::Result<Vec<Tensor<f64>>> {
        let mut grads = self.0.backward(inputs, grad_out)?;
        grads[0].scale(2.0);
        Ok(grads)
    }
}

/// Worst error reported for the doubled backward; a working checker returns about 0.5.
pub fn doubled_backward_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let inputs = [uniform(&[2, 5, 5, 2], &mut r, -1.0, 1.0), uniform(&[3, 3, 2, 3], &mut r, -1.0, 1.0)];
    let op = DoubledConv(Conv2dOp {
        stride: 1,
        padding: Padding::Same,
        bias: false,
    });
    check(&op, &inputs, seed)
}

/// A synthetic corpus under `dir` and a run config training on it with a
/// ratio split (0.2, 0.2).
pub fn synthetic_config(
    dir: &std::path::Path,
    arch: Architecture,
    per_class: usize,
    input: usize,
    width_scale: f64,
    epochs: usize,
) -> cxrnet::harness::RunConfig {
    use cxrnet::dataset::{generate_synthetic, SplitSpec};
    use cxrnet::harness::{DatasetSource, RunConfig};
    let root = dir.join("corpus");
    if !root.exists() {
        generate_synthetic(per_class, input, 10, &root).unwrap();
    }
    let mut config = RunConfig::new(
        arch,
        DatasetSource::Folder {
            root,
            balance_seed: 10,
            split: SplitSpec::Ratios {
                test_fraction: 0.2,
                validation_fraction_of_trainval: 0.2,
                seed: 10,
            },
        },
    );
    config.width_scale = width_scale;
    config.input_size = input;
    config.hyperparameters.epochs = epochs;
    config
}
