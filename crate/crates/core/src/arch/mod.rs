//! Layer-graph model descriptions, shape tracing and parameter counting.

mod builders;
pub mod network;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{conv_output_dim, Padding};

pub use builders::{build, build_densenet121, build_modified_vgg16, build_resnet50, scaled_width};
pub use network::{
    backward, forward, forward_pass, network_gradient_check, ForwardPass, Gradients, LayerParams, NetworkCheckReport,
    NetworkOp, ParamStore,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    ModifiedVgg16,
    Resnet50,
    Densenet121,
}

impl Architecture {
    /// Row order of the architecture comparison.
    pub const ALL: [Architecture; 3] = [
        Architecture::ModifiedVgg16,
        Architecture::Resnet50,
        Architecture::Densenet121,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::ModifiedVgg16 => "modified_vgg16",
            Architecture::Resnet50 => "resnet50",
            Architecture::Densenet121 => "densenet121",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "modified_vgg16" | "vgg16" => Ok(Architecture::ModifiedVgg16),
            "resnet50" => Ok(Architecture::Resnet50),
            "densenet121" => Ok(Architecture::Densenet121),
            other => Err(Error::InvalidArgument(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Per-sample activation shape (height, width, channels). Vectors are `1×1×len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape3 {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape3 {
    pub const fn new(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c }
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}×{}×{}", self.h, self.w, self.c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Input,
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        bias: bool,
    },
    BatchNorm,
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
        pad: usize,
    },
    AvgPool {
        window: usize,
        stride: usize,
    },
    GlobalAvgPool,
    Dense {
        units: usize,
        bias: bool,
    },
    /// Additive skip join; the first input is the main path.
    Add,
    /// Channel-axis concatenation in input order.
    Concat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNode {
    pub name: String,
    pub stage: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    pub inputs: Vec<usize>,
}

/// A validated, immutable layer graph. Nodes are stored in topological order;
/// node 0 is the single input and the last node is the single output (logits).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: Architecture,
    pub input_shape: Shape3,
    pub num_classes: usize,
    pub width_scale: f64,
    nodes: Vec<LayerNode>,
}

/// `(stage, output shape)` for every named stage, in graph order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeTrace(pub Vec<(String, Shape3)>);

impl ShapeTrace {
    pub fn get(&self, stage: &str) -> Option<Shape3> {
        self.0.iter().find(|(s, _)| s == stage).map(|&(_, shape)| shape)
    }
}

impl fmt::Display for ShapeTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (stage, shape) in &self.0 {
            writeln!(f, "{stage:<20} {shape}")?;
        }
        Ok(())
    }
}

impl ModelSpec {
    pub fn new(
        name: Architecture,
        input_shape: Shape3,
        num_classes: usize,
        width_scale: f64,
        nodes: Vec<LayerNode>,
    ) -> Result<Self> {
        let spec = Self {
            name,
            input_shape,
            num_classes,
            width_scale,
            nodes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn output_index(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Structural checks plus full shape inference.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if !(self.width_scale > 0.0 && self.width_scale <= 1.0) {
            return bad(format!("width_scale {} outside (0, 1]", self.width_scale));
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        let Some(first) = self.nodes.first() else {
            return bad("empty graph".into());
        };
        if first.kind != LayerKind::Input || !first.inputs.is_empty() {
            return bad("node 0 must be the input".into());
        }
        let mut consumers = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate().skip(1) {
            if node.kind == LayerKind::Input {
                return bad(format!("second input node {:?}", node.name));
            }
            let arity_ok = match node.kind {
                LayerKind::Add | LayerKind::Concat => node.inputs.len() >= 2,
                _ => node.inputs.len() == 1,
            };
            if !arity_ok {
                return bad(format!("node {:?} has {} inputs", node.name, node.inputs.len()));
            }
            for &src in &node.inputs {
                if src >= i {
                    return bad(format!("node {:?} reads from a later node {src}", node.name));
                }
                consumers[src] += 1;
            }
        }
        let last = self.nodes.len() - 1;
        if let Some(dead) = (0..last).find(|&i| consumers[i] == 0) {
            return bad(format!("node {:?} has no consumers", self.nodes[dead].name));
        }
        let out = self.node_shapes()?[last];
        if out != Shape3::new(1, 1, self.num_classes) {
            return bad(format!("output shape {out} does not match {} classes", self.num_classes));
        }
        Ok(())
    }

    /// Output shape of every node under the layer shape algebra.
    pub fn node_shapes(&self) -> Result<Vec<Shape3>> {
        let mut shapes: Vec<Shape3> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let ins: Vec<Shape3> = node.inputs.iter().map(|&i| shapes[i]).collect();
            let shape = match (&node.kind, ins.first()) {
                (LayerKind::Input, _) => self.input_shape,
                (_, None) => return Err(Error::InvalidSpec(format!("node {:?} has no input", node.name))),
                (
                    &LayerKind::Conv {
                        filters,
                        kernel,
                        stride,
                        padding,
                        ..
                    },
                    Some(s),
                ) => {
                    let p = padding.amount(kernel);
                    Shape3::new(
                        conv_output_dim(s.h, kernel, stride, p).map_err(|e| self.shape_error(node, e))?,
                        conv_output_dim(s.w, kernel, stride, p).map_err(|e| self.shape_error(node, e))?,
                        filters,
                    )
                }
                (LayerKind::BatchNorm | LayerKind::Relu, Some(&s)) => s,
                (&LayerKind::MaxPool { window, stride, pad }, Some(s)) => {
                    if window > s.h || window > s.w {
                        return Err(Error::InvalidSpec(format!(
                            "pool {:?}: window {window} larger than {s}",
                            node.name
                        )));
                    }
                    Shape3::new(
                        conv_output_dim(s.h, window, stride, pad).map_err(|e| self.shape_error(node, e))?,
                        conv_output_dim(s.w, window, stride, pad).map_err(|e| self.shape_error(node, e))?,
                        s.c,
                    )
                }
                (&LayerKind::AvgPool { window, stride }, Some(s)) => {
                    if window > s.h || window > s.w {
                        return Err(Error::InvalidSpec(format!(
                            "pool {:?}: window {window} larger than {s}",
                            node.name
                        )));
                    }
                    Shape3::new(
                        conv_output_dim(s.h, window, stride, 0).map_err(|e| self.shape_error(node, e))?,
                        conv_output_dim(s.w, window, stride, 0).map_err(|e| self.shape_error(node, e))?,
                        s.c,
                    )
                }
                (LayerKind::GlobalAvgPool, Some(s)) => Shape3::new(1, 1, s.c),
                (&LayerKind::Dense { units, .. }, Some(_)) => Shape3::new(1, 1, units),
                (LayerKind::Add, Some(&s)) => {
                    if let Some(other) = ins.iter().find(|&&o| o != s) {
                        return Err(Error::InvalidSpec(format!(
                            "additive join {:?} has operands {s} and {other}",
                            node.name
                        )));
                    }
                    s
                }
                (LayerKind::Concat, Some(&s)) => {
                    if let Some(other) = ins.iter().find(|o| o.h != s.h || o.w != s.w) {
                        return Err(Error::InvalidSpec(format!(
                            "concatenation {:?} has spatial mismatch {s} vs {other}",
                            node.name
                        )));
                    }
                    Shape3::new(s.h, s.w, ins.iter().map(|o| o.c).sum())
                }
            };
            shapes.push(shape);
        }
        Ok(shapes)
    }

    fn shape_error(&self, node: &LayerNode, e: Error) -> Error {
        Error::InvalidSpec(format!("node {:?}: {e}", node.name))
    }

    /// Scalars held by one node: weights, biases, and batch-norm gamma/beta/running statistics.
    pub fn node_parameter_count(&self, index: usize, shapes: &[Shape3]) -> usize {
        let node = &self.nodes[index];
        let input = node.inputs.first().map(|&i| shapes[i]);
        match (&node.kind, input) {
            (&LayerKind::Conv { filters, kernel, bias, .. }, Some(s)) => {
                kernel * kernel * s.c * filters + if bias { filters } else { 0 }
            }
            (LayerKind::BatchNorm, Some(s)) => 4 * s.c,
            (&LayerKind::Dense { units, bias }, Some(s)) => s.len() * units + if bias { units } else { 0 },
            _ => 0,
        }
    }

    pub fn count_parameters(&self) -> usize {
        let shapes = self.node_shapes().expect("validated spec");
        (0..self.nodes.len()).map(|i| self.node_parameter_count(i, &shapes)).sum()
    }

    /// Trainable scalars only (excludes batch-norm running statistics).
    pub fn count_trainable_parameters(&self) -> usize {
        let shapes = self.node_shapes().expect("validated spec");
        (0..self.nodes.len())
            .map(|i| match self.nodes[i].kind {
                LayerKind::BatchNorm => self.node_parameter_count(i, &shapes) / 2,
                _ => self.node_parameter_count(i, &shapes),
            })
            .sum()
    }

    pub fn trace_shapes(&self) -> ShapeTrace {
        let shapes = self.node_shapes().expect("validated spec");
        let mut order: Vec<String> = Vec::new();
        let mut last: BTreeMap<&str, Shape3> = BTreeMap::new();
        for (node, &shape) in self.nodes.iter().zip(&shapes).skip(1) {
            if !last.contains_key(node.stage.as_str()) {
                order.push(node.stage.clone());
            }
            last.insert(&node.stage, shape);
        }
        ShapeTrace(order.into_iter().map(|s| (s.clone(), last[s.as_str()])).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// SHA-256 over the compact JSON encoding.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// The same graph with every additive join reduced to its main path and
    /// the then-unused shortcut nodes pruned. Also returns, for each kept node,
    /// its index in `self`.
    pub fn without_skip_edges(&self) -> Result<(ModelSpec, Vec<usize>)> {
        let n = self.nodes.len();
        let mut alias: Vec<usize> = (0..n).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.kind == LayerKind::Add {
                alias[i] = alias[node.inputs[0]];
            }
        }
        let mut live = vec![false; n];
        live[alias[n - 1]] = true;
        for i in (0..n).rev() {
            if live[i] && self.nodes[i].kind != LayerKind::Add {
                for &src in &self.nodes[i].inputs {
                    live[alias[src]] = true;
                }
            }
        }
        let kept: Vec<usize> = (0..n).filter(|&i| live[i] && self.nodes[i].kind != LayerKind::Add).collect();
        let mut new_index = vec![usize::MAX; n];
        for (j, &i) in kept.iter().enumerate() {
            new_index[i] = j;
        }
        let nodes = kept
            .iter()
            .map(|&i| {
                let mut node = self.nodes[i].clone();
                node.inputs = node.inputs.iter().map(|&s| new_index[alias[s]]).collect();
                node
            })
            .collect();
        Ok((
            ModelSpec::new(self.name, self.input_shape, self.num_classes, self.width_scale, nodes)?,
            kept,
        ))
    }
}
