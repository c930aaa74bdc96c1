//! Parameter storage and graph execution (forward and reverse-mode backward).

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LayerKind, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::gradcheck::{Differentiable, GradCheckOptions};
use crate::tensor::{
    avgpool2d_backward, avgpool2d_forward, batchnorm_backward, batchnorm_forward, conv2d_backward,
    conv2d_forward, dense_backward, dense_forward, global_avgpool_backward, global_avgpool_forward,
    maxpool2d_backward, maxpool2d_forward, relu_backward, relu_forward, BatchNormCache,
    BatchNormParams, BatchStats, ConvParams, DenseParams, Mode, Scalar, Tensor,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum LayerParams<T> {
    Conv(ConvParams<T>),
    BatchNorm(BatchNormParams<T>),
    Dense(DenseParams<T>),
}

impl<T: Scalar> LayerParams<T> {
    fn tensors(&self) -> Vec<&Tensor<T>> {
        match self {
            LayerParams::Conv(p) => std::iter::once(&p.kernel).chain(p.bias.as_ref()).collect(),
            LayerParams::BatchNorm(p) => vec![&p.gamma, &p.beta, &p.running_mean, &p.running_var],
            LayerParams::Dense(p) => std::iter::once(&p.weights).chain(p.bias.as_ref()).collect(),
        }
    }

    fn trainable_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        match self {
            LayerParams::Conv(p) => std::iter::once(("kernel", &mut p.kernel))
                .chain(p.bias.as_mut().map(|b| ("bias", b)))
                .collect(),
            LayerParams::BatchNorm(p) => vec![("gamma", &mut p.gamma), ("beta", &mut p.beta)],
            LayerParams::Dense(p) => std::iter::once(("weights", &mut p.weights))
                .chain(p.bias.as_mut().map(|b| ("bias", b)))
                .collect(),
        }
    }

    fn trainable(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            LayerParams::Conv(p) => std::iter::once(("kernel", &p.kernel))
                .chain(p.bias.as_ref().map(|b| ("bias", b)))
                .collect(),
            LayerParams::BatchNorm(p) => vec![("gamma", &p.gamma), ("beta", &p.beta)],
            LayerParams::Dense(p) => std::iter::once(("weights", &p.weights))
                .chain(p.bias.as_ref().map(|b| ("bias", b)))
                .collect(),
        }
    }

    fn cast<U: Scalar>(&self) -> LayerParams<U> {
        match self {
            LayerParams::Conv(p) => LayerParams::Conv(ConvParams {
                kernel: p.kernel.cast(),
                bias: p.bias.as_ref().map(Tensor::cast),
            }),
            LayerParams::BatchNorm(p) => LayerParams::BatchNorm(BatchNormParams {
                gamma: p.gamma.cast(),
                beta: p.beta.cast(),
                running_mean: p.running_mean.cast(),
                running_var: p.running_var.cast(),
                epsilon: p.epsilon,
                momentum: p.momentum,
            }),
            LayerParams::Dense(p) => LayerParams::Dense(DenseParams {
                weights: p.weights.cast(),
                bias: p.bias.as_ref().map(Tensor::cast),
            }),
        }
    }
}

/// Parameters for every node of a [`ModelSpec`], indexed like its nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ParamStore<T> {
    layers: Vec<Option<LayerParams<T>>>,
}

impl<T: Scalar> ParamStore<T> {
    /// Seeded fan-in-scaled normal init (variance 2/fan_in) for conv and dense
    /// weights; zero biases; batch-norm gamma 1, beta 0.
    pub fn init(spec: &ModelSpec, seed: u64) -> Self {
        let shapes = spec.node_shapes().expect("validated spec");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |shape: &[usize], fan_in: usize| {
            let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            Tensor::from_fn(shape, |_| T::from_f64(dist.sample(&mut rng)))
        };
        let layers = spec
            .nodes()
            .iter()
            .map(|node| {
                let input = node.inputs.first().map(|&i| shapes[i]);
                match (&node.kind, input) {
                    (&LayerKind::Conv { filters, kernel, bias, .. }, Some(s)) => Some(LayerParams::Conv(ConvParams {
                        kernel: normal(&[kernel, kernel, s.c, filters], kernel * kernel * s.c),
                        bias: bias.then(|| Tensor::zeros(&[filters])),
                    })),
                    (LayerKind::BatchNorm, Some(s)) => Some(LayerParams::BatchNorm(BatchNormParams::new(s.c))),
                    (&LayerKind::Dense { units, bias }, Some(s)) => Some(LayerParams::Dense(DenseParams {
                        weights: normal(&[s.len(), units], s.len()),
                        bias: bias.then(|| Tensor::zeros(&[units])),
                    })),
                    _ => None,
                }
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Option<LayerParams<T>>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Option<LayerParams<T>>] {
        &mut self.layers
    }

    pub fn layer(&self, index: usize) -> Option<&LayerParams<T>> {
        self.layers.get(index).and_then(Option::as_ref)
    }

    /// Every stored scalar, running statistics included.
    pub fn count(&self) -> usize {
        self.layers
            .iter()
            .flatten()
            .flat_map(|l| l.tensors())
            .map(|t| t.len())
            .sum()
    }

    /// Checks that every parameterized node of `spec` has parameters of the right kind and shape.
    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        if self.layers.len() != spec.nodes().len() {
            return Err(Error::InvalidArgument(format!(
                "parameter store has {} layers, spec has {} nodes",
                self.layers.len(),
                spec.nodes().len()
            )));
        }
        let shapes = spec.node_shapes()?;
        for (i, node) in spec.nodes().iter().enumerate() {
            let input = node.inputs.first().map(|&j| shapes[j]);
            let missing = || Error::InvalidArgument(format!("uninitialized parameters for {:?}", node.name));
            match (&node.kind, input, &self.layers[i]) {
                (&LayerKind::Conv { filters, kernel, bias, .. }, Some(s), p) => {
                    let Some(LayerParams::Conv(p)) = p else { return Err(missing()) };
                    let want = [kernel, kernel, s.c, filters];
                    if p.kernel.shape() != want {
                        return Err(Error::shape(format!("{} kernel", node.name), p.kernel.shape(), &want));
                    }
                    if p.bias.is_some() != bias {
                        return Err(Error::InvalidArgument(format!("bias presence mismatch at {:?}", node.name)));
                    }
                }
                (LayerKind::BatchNorm, Some(s), p) => {
                    let Some(LayerParams::BatchNorm(p)) = p else { return Err(missing()) };
                    if p.channels() != s.c {
                        return Err(Error::shape(format!("{} gamma", node.name), p.gamma.shape(), &[s.c]));
                    }
                }
                (&LayerKind::Dense { units, bias }, Some(s), p) => {
                    let Some(LayerParams::Dense(p)) = p else { return Err(missing()) };
                    let want = [s.len(), units];
                    if p.weights.shape() != want {
                        return Err(Error::shape(format!("{} weights", node.name), p.weights.shape(), &want));
                    }
                    if p.bias.is_some() != bias {
                        return Err(Error::InvalidArgument(format!("bias presence mismatch at {:?}", node.name)));
                    }
                }
                (_, _, Some(_)) => {
                    return Err(Error::InvalidArgument(format!(
                        "unexpected parameters for parameter-free node {:?}",
                        node.name
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Named trainable tensors in node order (`<node>.<tensor>`).
    pub fn trainable(&self, spec: &ModelSpec) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .zip(spec.nodes())
            .filter_map(|(l, node)| l.as_ref().map(|l| (node, l)))
            .flat_map(|(node, l)| l.trainable().into_iter().map(move |(k, t)| (format!("{}.{k}", node.name), t)))
            .collect()
    }

    pub fn trainable_mut(&mut self, spec: &ModelSpec) -> Vec<(String, &mut Tensor<T>)> {
        self.layers
            .iter_mut()
            .zip(spec.nodes())
            .filter_map(|(l, node)| l.as_mut().map(|l| (node, l)))
            .flat_map(|(node, l)| {
                l.trainable_mut()
                    .into_iter()
                    .map(move |(k, t)| (format!("{}.{k}", node.name), t))
            })
            .collect()
    }

    /// Folds the batch statistics recorded in a train-mode pass into the running averages.
    pub fn apply_batch_stats(&mut self, pass: &ForwardPass<T>) {
        for (layer, stats) in self.layers.iter_mut().zip(&pass.stats) {
            if let (Some(LayerParams::BatchNorm(p)), Some(s)) = (layer, stats) {
                p.update_running(s);
            }
        }
    }

    /// The sub-store for the given node indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            layers: indices.iter().map(|&i| self.layers[i].clone()).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            layers: self.layers.iter().map(|l| l.as_ref().map(LayerParams::cast)).collect(),
        }
    }
}

/// Activations and batch-norm state recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    pub mode: Mode,
    activations: Vec<Option<Tensor<T>>>,
    caches: Vec<Option<BatchNormCache<T>>>,
    stats: Vec<Option<BatchStats<T>>>,
}

impl<T: Scalar> ForwardPass<T> {
    /// `batch × num_classes` logits.
    pub fn logits(&self) -> Tensor<T> {
        let out = self.activations.last().and_then(Option::as_ref).expect("output retained");
        let n = out.shape()[0];
        let k = out.len() / n;
        out.clone().reshape(&[n, k]).expect("same length")
    }

    pub fn activation(&self, index: usize) -> Option<&Tensor<T>> {
        self.activations.get(index).and_then(Option::as_ref)
    }
}

fn check_input<T: Scalar>(spec: &ModelSpec, input: &Tensor<T>) -> Result<()> {
    let (_, h, w, c) = input.dims4("model input")?;
    let s = spec.input_shape;
    if (h, w, c) != (s.h, s.w, s.c) {
        return Err(Error::shape(
            "model input",
            input.shape(),
            &[input.shape()[0], s.h, s.w, s.c],
        ));
    }
    Ok(())
}

fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let (n, h, w, _) = parts[0].dims4("concat")?;
    let widths: Vec<usize> = parts.iter().map(|p| p.shape()[3]).collect();
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(n * h * w * total);
    for px in 0..n * h * w {
        for (p, &c) in parts.iter().zip(&widths) {
            out.extend_from_slice(&p.data()[px * c..(px + 1) * c]);
        }
    }
    Tensor::new(vec![n, h, w, total], out)
}

fn run<T: Scalar>(
    spec: &ModelSpec,
    params: &ParamStore<T>,
    input: &Tensor<T>,
    mode: Mode,
    keep_all: bool,
) -> Result<ForwardPass<T>> {
    check_input(spec, input)?;
    params.check(spec)?;
    let nodes = spec.nodes();
    let mut last_use: Vec<usize> = (0..nodes.len()).collect();
    for (i, node) in nodes.iter().enumerate() {
        for &src in &node.inputs {
            last_use[src] = i;
        }
    }

    let mut acts: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
    let mut caches = vec![None; nodes.len()];
    let mut stats = vec![None; nodes.len()];
    acts[0] = Some(input.clone());

    for (i, node) in nodes.iter().enumerate().skip(1) {
        let ins: Vec<&Tensor<T>> = node
            .inputs
            .iter()
            .map(|&s| acts[s].as_ref().expect("topological order keeps inputs alive"))
            .collect();
        let x = ins[0];
        let out = match (&node.kind, params.layer(i)) {
            (&LayerKind::Conv { stride, padding, .. }, Some(LayerParams::Conv(p))) => {
                conv2d_forward(x, p, stride, padding)?
            }
            (LayerKind::BatchNorm, Some(LayerParams::BatchNorm(p))) => {
                let r = batchnorm_forward(x, p, mode)?;
                caches[i] = Some(r.cache);
                stats[i] = r.stats;
                r.output
            }
            (LayerKind::Relu, _) => relu_forward(x),
            (&LayerKind::MaxPool { window, stride, pad }, _) => maxpool2d_forward(x, window, stride, pad)?,
            (&LayerKind::AvgPool { window, stride }, _) => avgpool2d_forward(x, window, stride)?,
            (LayerKind::GlobalAvgPool, _) => global_avgpool_forward(x)?,
            (&LayerKind::Dense { units, .. }, Some(LayerParams::Dense(p))) => {
                let n = x.shape()[0];
                dense_forward(x, p)?.reshape(&[n, 1, 1, units])?
            }
            (LayerKind::Add, _) => {
                let mut acc = x.clone();
                for other in &ins[1..] {
                    acc.add_assign(other)?;
                }
                acc.ensure_finite("additive join")?
            }
            (LayerKind::Concat, _) => concat_channels(&ins)?,
            (kind, _) => {
                return Err(Error::InvalidArgument(format!(
                    "cannot evaluate node {:?} ({kind:?})",
                    node.name
                )))
            }
        };
        acts[i] = Some(out);
        if !keep_all {
            for &src in &node.inputs {
                if last_use[src] == i {
                    acts[src] = None;
                }
            }
        }
    }
    Ok(ForwardPass {
        mode,
        activations: acts,
        caches,
        stats,
    })
}

/// Forward pass retaining every activation for [`backward`].
pub fn forward_pass<T: Scalar>(
    spec: &ModelSpec,
    params: &ParamStore<T>,
    input: &Tensor<T>,
    mode: Mode,
) -> Result<ForwardPass<T>> {
    run(spec, params, input, mode, true)
}

/// Logits (`batch × num_classes`) for an NHWC batch; frees activations as it goes.
pub fn forward<T: Scalar>(spec: &ModelSpec, params: &ParamStore<T>, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
    Ok(run(spec, params, input, mode, false)?.logits())
}

/// Gradients for every trainable tensor (in [`ParamStore::trainable`] order) and for the input.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub params: Vec<(String, Tensor<T>)>,
    pub input: Tensor<T>,
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Reverse-mode pass through the graph given `d loss / d logits`.
pub fn backward<T: Scalar>(
    spec: &ModelSpec,
    params: &ParamStore<T>,
    pass: &ForwardPass<T>,
    grad_logits: &Tensor<T>,
) -> Result<Gradients<T>> {
    let nodes = spec.nodes();
    let last = nodes.len() - 1;
    let out = pass.activations[last].as_ref().ok_or_else(|| {
        Error::InvalidArgument("forward pass did not retain activations".into())
    })?;
    if grad_logits.len() != out.len() {
        return Err(Error::shape("backward (grad_logits)", grad_logits.shape(), out.shape()));
    }
    let act = |i: usize| {
        pass.activations[i]
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("forward pass did not retain activations".into()))
    };

    let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
    let mut param_grads: Vec<Vec<Tensor<T>>> = vec![Vec::new(); nodes.len()];
    grads[last] = Some(grad_logits.clone().reshape(out.shape())?);

    for i in (1..nodes.len()).rev() {
        let Some(g) = grads[i].take() else { continue };
        let node = &nodes[i];
        let src = node.inputs[0];
        let x = act(src)?;
        match (&node.kind, params.layer(i)) {
            (&LayerKind::Conv { stride, padding, .. }, Some(LayerParams::Conv(p))) => {
                let (dx, pg) = conv2d_backward(x, p, stride, padding, &g)?;
                param_grads[i] = std::iter::once(pg.kernel).chain(pg.bias).collect();
                accumulate(&mut grads[src], dx)?;
            }
            (LayerKind::BatchNorm, Some(LayerParams::BatchNorm(p))) => {
                let cache = pass.caches[i].as_ref().expect("batchnorm cache recorded");
                let (dx, dgamma, dbeta) = batchnorm_backward(x, p, cache, &g)?;
                param_grads[i] = vec![dgamma, dbeta];
                accumulate(&mut grads[src], dx)?;
            }
            (LayerKind::Relu, _) => accumulate(&mut grads[src], relu_backward(x, &g)?)?,
            (&LayerKind::MaxPool { window, stride, pad }, _) => {
                accumulate(&mut grads[src], maxpool2d_backward(x, window, stride, pad, &g)?)?
            }
            (&LayerKind::AvgPool { window, stride }, _) => {
                accumulate(&mut grads[src], avgpool2d_backward(x, window, stride, &g)?)?
            }
            (LayerKind::GlobalAvgPool, _) => accumulate(&mut grads[src], global_avgpool_backward(x, &g)?)?,
            (LayerKind::Dense { .. }, Some(LayerParams::Dense(p))) => {
                let (dx, pg) = dense_backward(x, p, &g)?;
                param_grads[i] = std::iter::once(pg.weights).chain(pg.bias).collect();
                accumulate(&mut grads[src], dx)?;
            }
            (LayerKind::Add, _) => {
                for &s in &node.inputs {
                    accumulate(&mut grads[s], g.clone())?;
                }
            }
            (LayerKind::Concat, _) => {
                let (n, h, w, total) = g.dims4("concat backward")?;
                let mut offset = 0;
                for &s in &node.inputs {
                    let c = act(s)?.shape()[3];
                    let mut part = Vec::with_capacity(n * h * w * c);
                    for px in g.data().chunks_exact(total) {
                        part.extend_from_slice(&px[offset..offset + c]);
                    }
                    offset += c;
                    accumulate(&mut grads[s], Tensor::new(vec![n, h, w, c], part)?)?;
                }
            }
            (kind, _) => {
                return Err(Error::InvalidArgument(format!(
                    "cannot differentiate node {:?} ({kind:?})",
                    node.name
                )))
            }
        }
    }

    let named = params.trainable(spec);
    let mut flat = Vec::with_capacity(named.len());
    let mut it = named.into_iter();
    for (i, layer_grads) in param_grads.into_iter().enumerate() {
        let expected = params.layer(i).map_or(0, |l| l.trainable().len());
        let mut layer_grads = layer_grads.into_iter();
        for _ in 0..expected {
            let (name, t) = it.next().expect("trainable order matches nodes");
            let g = layer_grads.next().unwrap_or_else(|| Tensor::zeros(t.shape()));
            flat.push((name, g));
        }
    }
    let input = grads[0].take().unwrap_or_else(|| Tensor::zeros(act(0).map(|t| t.shape()).unwrap_or(&[1])));
    Ok(Gradients { params: flat, input })
}

/// A whole network as a [`Differentiable`]: inputs are `[batch, trainable tensors…]`
/// in [`ParamStore::trainable`] order; running statistics come from `template`.
pub struct NetworkOp {
    pub spec: ModelSpec,
    pub template: ParamStore<f64>,
    pub mode: Mode,
}

impl NetworkOp {
    /// The inputs list matching the current template values.
    pub fn inputs(&self, batch: Tensor<f64>) -> Vec<Tensor<f64>> {
        std::iter::once(batch)
            .chain(self.template.trainable(&self.spec).into_iter().map(|(_, t)| t.clone()))
            .collect()
    }

    fn params(&self, inputs: &[Tensor<f64>]) -> Result<ParamStore<f64>> {
        let mut p = self.template.clone();
        let mut slots = p.trainable_mut(&self.spec);
        if slots.len() + 1 != inputs.len() {
            return Err(Error::InvalidArgument(format!(
                "network expects {} inputs, got {}",
                slots.len() + 1,
                inputs.len()
            )));
        }
        for ((_, slot), value) in slots.iter_mut().zip(&inputs[1..]) {
            **slot = value.clone();
        }
        drop(slots);
        Ok(p)
    }
}

impl Differentiable for NetworkOp {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        forward(&self.spec, &self.params(inputs)?, &inputs[0], self.mode)
    }

    fn backward(&self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let p = self.params(inputs)?;
        let pass = forward_pass(&self.spec, &p, &inputs[0], self.mode)?;
        let g = backward(&self.spec, &p, &pass, grad_out)?;
        Ok(std::iter::once(g.input).chain(g.params.into_iter().map(|(_, t)| t)).collect())
    }
}

/// Which linear piece of every ReLU and max-pool window a forward pass used:
/// the sign of each ReLU input and the winning offset of each pooling window.
fn kink_pattern(spec: &ModelSpec, pass: &ForwardPass<f64>) -> Vec<u32> {
    let mut pattern = Vec::new();
    for node in spec.nodes() {
        let Some(x) = node.inputs.first().and_then(|&i| pass.activation(i)) else {
            continue;
        };
        match node.kind {
            LayerKind::Relu => pattern.extend(x.data().iter().map(|&v| u32::from(v > 0.0))),
            LayerKind::MaxPool { window, stride, pad } => {
                let [n, h, w, c] = x.shape()[..] else { continue };
                let ho = (h + 2 * pad - window) / stride + 1;
                let wo = (w + 2 * pad - window) / stride + 1;
                for b in 0..n {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            for ch in 0..c {
                                let mut best = (f64::NEG_INFINITY, 0u32);
                                for k in 0..window * window {
                                    let iy = (oy * stride + k / window) as isize - pad as isize;
                                    let ix = (ox * stride + k % window) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let v = x.data()[((b * h + iy as usize) * w + ix as usize) * c + ch];
                                    if v > best.0 {
                                        best = (v, k as u32);
                                    }
                                }
                                pattern.push(best.1);
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }
    pattern
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckReport {
    /// Worst relative error over the compared coordinates.
    pub worst: f64,
    pub checked: usize,
    /// Coordinates whose ±ε evaluations went through a different ReLU or
    /// max-pool piece than the unperturbed pass; these are not compared.
    pub crossed_kink: usize,
}

/// Central-difference check of a whole network against [`backward`], up to
/// `opts.max_coords` coordinates of the batch and of every trainable tensor.
///
/// With batch statistics every parameter reaches every activation, so a
/// perturbation of 1e-5 routinely moves some ReLU input across zero. Such
/// coordinates measure the kink, not the gradient, and are counted separately.
pub fn network_gradient_check(op: &NetworkOp, batch: &Tensor<f64>, opts: &GradCheckOptions) -> Result<NetworkCheckReport> {
    if !(1e-5..=1e-2).contains(&opts.epsilon) {
        return Err(Error::InvalidArgument(format!(
            "gradient check epsilon {} outside [1e-5, 1e-2]",
            opts.epsilon
        )));
    }
    let (spec, mode) = (&op.spec, op.mode);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let pass = forward_pass(spec, &op.template, batch, mode)?;
    let logits = pass.logits();
    let probe = Tensor::from_fn(logits.shape(), |_| rng.random_range(-1.0..1.0));
    let grads = backward(spec, &op.template, &pass, &probe)?;
    let center = kink_pattern(spec, &pass);

    let eval = |tensor: usize, j: usize, delta: f64| -> Result<(f64, bool)> {
        let mut store = op.template.clone();
        let mut x = batch.clone();
        if tensor == 0 {
            x.data_mut()[j] += delta;
        } else {
            store.trainable_mut(spec)[tensor - 1].1.data_mut()[j] += delta;
        }
        let pass = forward_pass(spec, &store, &x, mode)?;
        let l = pass.logits().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
        Ok((l, kink_pattern(spec, &pass) == center))
    };

    let mut report = NetworkCheckReport {
        worst: 0.0,
        checked: 0,
        crossed_kink: 0,
    };
    for t in 0..=grads.params.len() {
        let analytic = if t == 0 { &grads.input } else { &grads.params[t - 1].1 };
        let mut coords = index::sample(&mut rng, analytic.len(), opts.max_coords.min(analytic.len())).into_vec();
        coords.sort_unstable();
        for j in coords {
            let (plus, same_plus) = eval(t, j, opts.epsilon)?;
            let (minus, same_minus) = eval(t, j, -opts.epsilon)?;
            if !(same_plus && same_minus) {
                report.crossed_kink += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            let a = analytic.data()[j];
            let denom = a.abs().max(numeric.abs()).max(opts.magnitude_floor);
            report.worst = report.worst.max((a - numeric).abs() / denom);
            report.checked += 1;
        }
    }
    Ok(report)
}
