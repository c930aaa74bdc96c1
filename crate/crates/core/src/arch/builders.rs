use super::{Architecture, LayerKind, LayerNode, ModelSpec, Shape3};
use crate::error::{Error, Result};
use crate::tensor::Padding;

/// `base · scale` rounded to the nearest integer, never below 1.
pub fn scaled_width(base: usize, scale: f64) -> usize {
    ((base as f64 * scale).round() as usize).max(1)
}

struct Graph {
    nodes: Vec<LayerNode>,
    stage: String,
}

impl Graph {
    fn new() -> Self {
        Self {
            nodes: vec![LayerNode {
                name: "input".into(),
                stage: "input".into(),
                kind: LayerKind::Input,
                inputs: vec![],
            }],
            stage: "input".into(),
        }
    }

    fn stage(&mut self, stage: impl Into<String>) {
        self.stage = stage.into();
    }

    fn push(&mut self, name: impl Into<String>, kind: LayerKind, inputs: Vec<usize>) -> usize {
        self.nodes.push(LayerNode {
            name: name.into(),
            stage: self.stage.clone(),
            kind,
            inputs,
        });
        self.nodes.len() - 1
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        name: &str,
        x: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        bias: bool,
    ) -> usize {
        let kind = LayerKind::Conv {
            filters,
            kernel,
            stride,
            padding,
            bias,
        };
        self.push(format!("{name}_conv"), kind, vec![x])
    }

    fn bn(&mut self, name: &str, x: usize) -> usize {
        self.push(format!("{name}_bn"), LayerKind::BatchNorm, vec![x])
    }

    fn relu(&mut self, name: &str, x: usize) -> usize {
        self.push(format!("{name}_relu"), LayerKind::Relu, vec![x])
    }

    fn head(&mut self, x: usize, num_classes: usize) -> usize {
        let pooled = self.push("avg_pool", LayerKind::GlobalAvgPool, vec![x]);
        self.push(
            "predictions",
            LayerKind::Dense {
                units: num_classes,
                bias: true,
            },
            vec![pooled],
        )
    }
}

fn check_inputs(arch: Architecture, input: Shape3, num_classes: usize, width_scale: f64) -> Result<()> {
    if input.h == 0 || input.w == 0 || input.c == 0 {
        return Err(Error::InvalidArgument(format!("{arch}: empty input shape {input}")));
    }
    if !input.h.is_multiple_of(32) || !input.w.is_multiple_of(32) {
        return Err(Error::InvalidArgument(format!(
            "{arch}: input {}×{} must be divisible by 32",
            input.h, input.w
        )));
    }
    if num_classes == 0 {
        return Err(Error::InvalidArgument(format!("{arch}: num_classes must be positive")));
    }
    if !(width_scale > 0.0 && width_scale <= 1.0) || width_scale * 64.0 < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "{arch}: width_scale {width_scale} must lie in [1/64, 1]"
        )));
    }
    Ok(())
}

pub fn build(arch: Architecture, input: Shape3, num_classes: usize, width_scale: f64) -> Result<ModelSpec> {
    match arch {
        Architecture::ModifiedVgg16 => build_modified_vgg16(input, num_classes, width_scale),
        Architecture::Resnet50 => build_resnet50(input, num_classes, width_scale),
        Architecture::Densenet121 => build_densenet121(input, num_classes, width_scale),
    }
}

/// ResNet-50: 7×7/2 stem, 3×3/2 max pool, bottleneck stages repeated
/// (3, 4, 6, 3) with ×4 expansion, projection shortcuts at stage entry,
/// global average pool and a dense classifier. Convolutions carry biases and
/// are each followed by batch normalization.
pub fn build_resnet50(input: Shape3, num_classes: usize, width_scale: f64) -> Result<ModelSpec> {
    check_inputs(Architecture::Resnet50, input, num_classes, width_scale)?;
    let mut g = Graph::new();

    g.stage("conv1");
    let x = g.conv("conv1", 0, scaled_width(64, width_scale), 7, 2, Padding::Explicit(3), true);
    let x = g.bn("conv1", x);
    let mut x = g.relu("conv1", x);

    g.stage("conv2_x");
    x = g.push(
        "pool1_pool",
        LayerKind::MaxPool {
            window: 3,
            stride: 2,
            pad: 1,
        },
        vec![x],
    );

    for (stage, (&base, &repeats)) in [64usize, 128, 256, 512].iter().zip(&[3usize, 4, 6, 3]).enumerate() {
        let label = format!("conv{}", stage + 2);
        g.stage(format!("{label}_x"));
        let width = scaled_width(base, width_scale);
        for block in 0..repeats {
            let name = format!("{label}_block{}", block + 1);
            let stride = if block == 0 && stage > 0 { 2 } else { 1 };
            let shortcut = if block == 0 {
                let s = g.conv(&format!("{name}_0"), x, 4 * width, 1, stride, Padding::Explicit(0), true);
                g.bn(&format!("{name}_0"), s)
            } else {
                x
            };
            let y = g.conv(&format!("{name}_1"), x, width, 1, 1, Padding::Explicit(0), true);
            let y = g.bn(&format!("{name}_1"), y);
            let y = g.relu(&format!("{name}_1"), y);
            let y = g.conv(&format!("{name}_2"), y, width, 3, stride, Padding::Same, true);
            let y = g.bn(&format!("{name}_2"), y);
            let y = g.relu(&format!("{name}_2"), y);
            let y = g.conv(&format!("{name}_3"), y, 4 * width, 1, 1, Padding::Explicit(0), true);
            let y = g.bn(&format!("{name}_3"), y);
            let sum = g.push(format!("{name}_add"), LayerKind::Add, vec![y, shortcut]);
            x = g.relu(&format!("{name}_out"), sum);
        }
    }

    g.stage("head");
    g.head(x, num_classes);
    ModelSpec::new(Architecture::Resnet50, input, num_classes, width_scale, g.nodes)
}

/// DenseNet-121: stem as ResNet, dense blocks of (6, 12, 24, 16) pre-activation
/// composite layers (BN → ReLU → 1×1 conv to 4·growth → BN → ReLU → 3×3 conv to
/// growth) concatenated onto the running feature stack, transitions halving
/// channels with a 1×1 conv and halving resolution with 2×2 average pooling.
pub fn build_densenet121(input: Shape3, num_classes: usize, width_scale: f64) -> Result<ModelSpec> {
    check_inputs(Architecture::Densenet121, input, num_classes, width_scale)?;
    let growth = scaled_width(32, width_scale);
    let mut g = Graph::new();

    g.stage("convolution");
    let stem = scaled_width(64, width_scale);
    let x = g.conv("conv1", 0, stem, 7, 2, Padding::Explicit(3), false);
    let x = g.bn("conv1", x);
    let x = g.relu("conv1", x);

    g.stage("pooling");
    let mut x = g.push(
        "pool1_pool",
        LayerKind::MaxPool {
            window: 3,
            stride: 2,
            pad: 1,
        },
        vec![x],
    );
    let mut channels = stem;

    let blocks = [6usize, 12, 24, 16];
    for (b, &repeats) in blocks.iter().enumerate() {
        g.stage(format!("dense_block{}", b + 1));
        for layer in 0..repeats {
            let name = format!("conv{}_block{}", b + 2, layer + 1);
            let y = g.bn(&format!("{name}_0"), x);
            let y = g.relu(&format!("{name}_0"), y);
            let y = g.conv(&format!("{name}_1"), y, 4 * growth, 1, 1, Padding::Explicit(0), false);
            let y = g.bn(&format!("{name}_1"), y);
            let y = g.relu(&format!("{name}_1"), y);
            let y = g.conv(&format!("{name}_2"), y, growth, 3, 1, Padding::Same, false);
            x = g.push(format!("{name}_concat"), LayerKind::Concat, vec![x, y]);
            channels += growth;
        }
        if b + 1 < blocks.len() {
            let name = format!("pool{}", b + 2);
            g.stage(format!("transition{}_conv", b + 1));
            let y = g.bn(&name, x);
            let y = g.relu(&name, y);
            channels = (channels / 2).max(1);
            let y = g.conv(&name, y, channels, 1, 1, Padding::Explicit(0), false);
            g.stage(format!("transition{}_pool", b + 1));
            x = g.push(format!("{name}_pool"), LayerKind::AvgPool { window: 2, stride: 2 }, vec![y]);
        }
    }

    g.stage("classification");
    let x = g.bn("final", x);
    let x = g.relu("final", x);
    g.head(x, num_classes);
    ModelSpec::new(Architecture::Densenet121, input, num_classes, width_scale, g.nodes)
}

/// VGG-16 layout with every stage width halved: thirteen 3×3 convolutions in
/// blocks of (2, 2, 3, 3, 3) with widths (32, 64, 128, 256, 256), ReLU after
/// each, 2×2 max pooling after each block, then global average pooling and a
/// dense classifier. No batch normalization.
pub fn build_modified_vgg16(input: Shape3, num_classes: usize, width_scale: f64) -> Result<ModelSpec> {
    check_inputs(Architecture::ModifiedVgg16, input, num_classes, width_scale)?;
    let mut g = Graph::new();
    let mut x = 0;
    for (b, (&base, &convs)) in [32usize, 64, 128, 256, 256].iter().zip(&[2usize, 2, 3, 3, 3]).enumerate() {
        g.stage(format!("block{}", b + 1));
        let width = scaled_width(base, width_scale);
        for c in 0..convs {
            let name = format!("block{}_conv{}", b + 1, c + 1);
            let kind = LayerKind::Conv {
                filters: width,
                kernel: 3,
                stride: 1,
                padding: Padding::Same,
                bias: true,
            };
            x = g.push(name.clone(), kind, vec![x]);
            x = g.push(format!("{name}_relu"), LayerKind::Relu, vec![x]);
        }
        x = g.push(
            format!("block{}_pool", b + 1),
            LayerKind::MaxPool {
                window: 2,
                stride: 2,
                pad: 0,
            },
            vec![x],
        );
    }
    g.stage("head");
    g.head(x, num_classes);
    ModelSpec::new(Architecture::ModifiedVgg16, input, num_classes, width_scale, g.nodes)
}
