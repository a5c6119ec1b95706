use serde::{Deserialize, Serialize};

use crate::autodiff::{Padding, Var};
use crate::error::{Error, Result};

/// Batch-norm variance guard.
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    Mlp,
    LenetZhu,
    Convnet,
    /// Circular-padding, stride-1 convolutions with global average pooling.
    TranslationInvariant,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Linear {
        out_features: usize,
        bias: bool,
    },
    Conv {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        pad: usize,
        #[serde(default)]
        padding: Padding,
        #[serde(default = "yes")]
        bias: bool,
        /// Adds the layer input to the convolution output.
        #[serde(default)]
        skip: bool,
    },
    BatchNorm,
    Relu,
    Sigmoid,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    AvgPool {
        kernel: usize,
        stride: usize,
    },
    GlobalAvgPool,
    Flatten,
    /// Fixed per-channel affine map `(x - mean) / std`.
    Normalize {
        mean: Vec<f64>,
        std: Vec<f64>,
    },
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

/// Role of a parameter tensor, used by initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Weight { fan_in: usize },
    Bias,
    NormScale,
    NormShift,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
    pub layer: usize,
}

/// One fully-connected layer of a pure linear/ReLU cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FcLayer {
    pub out_features: usize,
    pub bias: bool,
    pub relu: bool,
}

impl FcLayer {
    pub fn new(out_features: usize, bias: bool, relu: bool) -> Self {
        Self { out_features, bias, relu }
    }
}

/// Position of a fully-connected layer inside a model's parameter list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FcSlot {
    pub weight: usize,
    pub bias: Option<usize>,
    pub relu: bool,
    pub in_features: usize,
    pub out_features: usize,
}

/// Declarative architecture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ArchKind,
    /// Per-sample input shape, e.g. `[C, H, W]` or `[d]`.
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    /// Channel scale `D` for convolutional presets.
    #[serde(default)]
    pub width: usize,
    pub layers: Vec<LayerSpec>,
}

fn conv(out_channels: usize, kernel: usize, padding: Padding) -> LayerSpec {
    LayerSpec::Conv { out_channels, kernel, stride: 1, pad: kernel / 2, padding, bias: true, skip: false }
}

impl ModelSpec {
    /// Fully-connected cascade. A `Flatten` is inserted when the input has more
    /// than one dimension.
    pub fn mlp(input_shape: &[usize], layers: &[FcLayer]) -> Self {
        let mut spec_layers = Vec::new();
        if input_shape.len() > 1 {
            spec_layers.push(LayerSpec::Flatten);
        }
        for l in layers {
            spec_layers.push(LayerSpec::Linear { out_features: l.out_features, bias: l.bias });
            if l.relu {
                spec_layers.push(LayerSpec::Relu);
            }
        }
        Self {
            kind: ArchKind::Mlp,
            input_shape: input_shape.to_vec(),
            num_classes: layers.last().map_or(0, |l| l.out_features),
            width: 0,
            layers: spec_layers,
        }
    }

    /// Biased ReLU MLP with the given hidden widths and a biased linear head.
    pub fn mlp_classifier(input_shape: &[usize], hidden: &[usize], num_classes: usize) -> Self {
        let mut layers: Vec<FcLayer> = hidden.iter().map(|&h| FcLayer::new(h, true, true)).collect();
        layers.push(FcLayer::new(num_classes, true, false));
        Self::mlp(input_shape, &layers)
    }

    /// Shallow, smooth LeNet analog: two 5x5 stride-1 sigmoid convolutions
    /// with `width` channels feeding one large biased classification layer.
    pub fn lenet_zhu(input_shape: &[usize], num_classes: usize, width: usize) -> Self {
        Self {
            kind: ArchKind::LenetZhu,
            input_shape: input_shape.to_vec(),
            num_classes,
            width,
            layers: vec![
                conv(width, 5, Padding::Zero),
                LayerSpec::Sigmoid,
                conv(width, 5, Padding::Zero),
                LayerSpec::Sigmoid,
                LayerSpec::Flatten,
                LayerSpec::Linear { out_features: num_classes, bias: true },
            ],
        }
    }

    /// Eight 3x3 conv + batch-norm + ReLU blocks with channel multipliers
    /// 1,2,2,4,4,4 | pool | 4,4 | pool, then a biased linear head.
    ///
    /// Pooling is 3x3 with stride 3 for inputs of at least 27 pixels per side
    /// and 2x2 with stride 2 below that. Smaller inputs would otherwise reach
    /// the last two blocks as 1x1 maps, where batch norm over a single image
    /// outputs a constant.
    pub fn convnet(input_shape: &[usize], num_classes: usize, width: usize) -> Self {
        Self::convnet_deep(input_shape, num_classes, width, 0)
    }

    /// [`ModelSpec::convnet`] with `extra_blocks` additional 4D-channel residual
    /// conv blocks before the first pooling layer.
    pub fn convnet_deep(input_shape: &[usize], num_classes: usize, width: usize, extra_blocks: usize) -> Self {
        let side = input_shape.iter().skip(1).copied().min().unwrap_or(0);
        let pool = if side >= 27 { 3 } else { 2 };
        let mut layers = Vec::new();
        let block = |layers: &mut Vec<LayerSpec>, channels: usize, skip: bool| {
            layers.push(LayerSpec::Conv {
                out_channels: channels,
                kernel: 3,
                stride: 1,
                pad: 1,
                padding: Padding::Zero,
                bias: true,
                skip,
            });
            layers.push(LayerSpec::BatchNorm);
            layers.push(LayerSpec::Relu);
        };
        for mult in [1, 2, 2, 4, 4, 4] {
            block(&mut layers, mult * width, false);
        }
        for _ in 0..extra_blocks {
            block(&mut layers, 4 * width, true);
        }
        layers.push(LayerSpec::MaxPool { kernel: pool, stride: pool });
        block(&mut layers, 4 * width, false);
        block(&mut layers, 4 * width, false);
        layers.push(LayerSpec::MaxPool { kernel: pool, stride: pool });
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::Linear { out_features: num_classes, bias: true });
        Self { kind: ArchKind::Convnet, input_shape: input_shape.to_vec(), num_classes, width, layers }
    }

    /// Three conv + batch-norm + ReLU blocks, global average pooling and a
    /// biased linear head. With circular padding the parameter gradient is
    /// invariant under circular shifts of the input.
    pub fn translation_invariant(input_shape: &[usize], num_classes: usize, width: usize, padding: Padding) -> Self {
        let mut layers = Vec::new();
        for mult in [1, 2, 2] {
            layers.push(conv(mult * width, 3, padding));
            layers.push(LayerSpec::BatchNorm);
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::GlobalAvgPool);
        layers.push(LayerSpec::Linear { out_features: num_classes, bias: true });
        let kind = match padding {
            Padding::Circular => ArchKind::TranslationInvariant,
            Padding::Zero => ArchKind::Custom,
        };
        Self { kind, input_shape: input_shape.to_vec(), num_classes, width, layers }
    }

    /// Per-sample output shape of every layer, checking that shapes compose.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Spec(format!("invalid input shape {:?}", self.input_shape)));
        }
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let fail = |msg: String| Error::Spec(format!("layer {i} ({layer:?}): {msg}"));
            shape = match layer {
                LayerSpec::Linear { out_features, .. } => {
                    if shape.len() != 1 {
                        return Err(fail(format!("expects a flat input, got {shape:?}")));
                    }
                    if *out_features == 0 {
                        return Err(fail("zero output features".into()));
                    }
                    vec![*out_features]
                }
                LayerSpec::Conv { out_channels, kernel, stride, pad, padding, skip, .. } => {
                    if shape.len() != 3 {
                        return Err(fail(format!("expects C x H x W, got {shape:?}")));
                    }
                    if *out_channels == 0 || *kernel == 0 || *stride == 0 {
                        return Err(fail("zero-sized convolution".into()));
                    }
                    let (h, w) = (shape[1], shape[2]);
                    if *padding == Padding::Circular && (*pad > h || *pad > w) {
                        return Err(fail("circular padding wider than the image".into()));
                    }
                    if h + 2 * pad < *kernel || w + 2 * pad < *kernel {
                        return Err(fail(format!("kernel {kernel} larger than padded input {shape:?}")));
                    }
                    let next = vec![
                        *out_channels,
                        (h + 2 * pad - kernel) / stride + 1,
                        (w + 2 * pad - kernel) / stride + 1,
                    ];
                    if *skip && next != shape {
                        return Err(fail(format!("skip connection needs equal shapes, {shape:?} -> {next:?}")));
                    }
                    next
                }
                LayerSpec::BatchNorm | LayerSpec::Relu | LayerSpec::Sigmoid => shape,
                LayerSpec::MaxPool { kernel, stride } | LayerSpec::AvgPool { kernel, stride } => {
                    if shape.len() != 3 || *kernel == 0 || *stride == 0 || shape[1] < *kernel || shape[2] < *kernel {
                        return Err(fail(format!("cannot pool {shape:?}")));
                    }
                    vec![shape[0], (shape[1] - kernel) / stride + 1, (shape[2] - kernel) / stride + 1]
                }
                LayerSpec::GlobalAvgPool => {
                    if shape.len() != 3 {
                        return Err(fail(format!("expects C x H x W, got {shape:?}")));
                    }
                    vec![shape[0]]
                }
                LayerSpec::Flatten => vec![shape.iter().product()],
                LayerSpec::Normalize { mean, std } => {
                    if mean.len() != shape[0] || std.len() != shape[0] || std.iter().any(|&s| s <= 0.0) {
                        return Err(fail("normalization needs one mean and positive std per channel".into()));
                    }
                    shape
                }
            };
            out.push(shape.clone());
        }
        Ok(out)
    }

    /// Checks shape composition, the classification head and kind-specific
    /// constraints.
    pub fn validate(&self) -> Result<()> {
        let shapes = self.layer_shapes()?;
        match self.layers.last() {
            Some(LayerSpec::Linear { out_features, bias: true }) if *out_features == self.num_classes => {}
            _ => {
                return Err(Error::Spec(format!(
                    "last layer must be a biased linear layer with {} outputs",
                    self.num_classes
                )))
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Spec("need at least two classes".into()));
        }
        debug_assert_eq!(shapes.last(), Some(&vec![self.num_classes]));
        if self.kind == ArchKind::TranslationInvariant {
            for layer in &self.layers {
                match layer {
                    LayerSpec::Conv { stride, padding, .. } if *stride != 1 || *padding != Padding::Circular => {
                        return Err(Error::Spec(
                            "translation-invariant variant needs circular padding with stride 1".into(),
                        ));
                    }
                    LayerSpec::MaxPool { .. } | LayerSpec::AvgPool { .. } => {
                        return Err(Error::Spec("translation-invariant variant cannot use strided pooling".into()));
                    }
                    _ => {}
                }
            }
        }
        if self.kind == ArchKind::Mlp && self.fc_chain().is_err() {
            return Err(Error::Spec("mlp kind may only contain linear and ReLU layers".into()));
        }
        Ok(())
    }

    /// Parameter tensors in order, with names and initialization roles.
    pub fn param_infos(&self) -> Result<Vec<ParamInfo>> {
        let shapes = self.layer_shapes()?;
        let mut infos = Vec::new();
        let (mut n_conv, mut n_fc, mut n_bn) = (0, 0, 0);
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { &self.input_shape } else { &shapes[i - 1] };
            match layer {
                LayerSpec::Linear { out_features, bias } => {
                    let name = format!("fc{n_fc}");
                    n_fc += 1;
                    infos.push(ParamInfo {
                        name: format!("{name}.weight"),
                        shape: vec![*out_features, input[0]],
                        role: ParamRole::Weight { fan_in: input[0] },
                        layer: i,
                    });
                    if *bias {
                        infos.push(ParamInfo {
                            name: format!("{name}.bias"),
                            shape: vec![*out_features],
                            role: ParamRole::Bias,
                            layer: i,
                        });
                    }
                }
                LayerSpec::Conv { out_channels, kernel, bias, .. } => {
                    let name = format!("conv{n_conv}");
                    n_conv += 1;
                    let fan_in = input[0] * kernel * kernel;
                    infos.push(ParamInfo {
                        name: format!("{name}.weight"),
                        shape: vec![*out_channels, input[0], *kernel, *kernel],
                        role: ParamRole::Weight { fan_in },
                        layer: i,
                    });
                    if *bias {
                        infos.push(ParamInfo {
                            name: format!("{name}.bias"),
                            shape: vec![*out_channels],
                            role: ParamRole::Bias,
                            layer: i,
                        });
                    }
                }
                LayerSpec::BatchNorm => {
                    let name = format!("bn{n_bn}");
                    n_bn += 1;
                    infos.push(ParamInfo {
                        name: format!("{name}.weight"),
                        shape: vec![input[0]],
                        role: ParamRole::NormScale,
                        layer: i,
                    });
                    infos.push(ParamInfo {
                        name: format!("{name}.bias"),
                        shape: vec![input[0]],
                        role: ParamRole::NormShift,
                        layer: i,
                    });
                }
                _ => {}
            }
        }
        Ok(infos)
    }

    pub fn num_params(&self) -> Result<usize> {
        Ok(self.param_infos()?.iter().map(|p| p.shape.iter().product::<usize>()).sum())
    }

    /// Fully-connected layers of a pure linear/ReLU cascade (an optional
    /// leading `Flatten` is allowed).
    pub fn fc_chain(&self) -> Result<Vec<FcSlot>> {
        let mut slots: Vec<FcSlot> = Vec::new();
        let mut param = 0;
        let mut features: usize = self.input_shape.iter().product();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Flatten if i == 0 => {}
                LayerSpec::Linear { out_features, bias } => {
                    let weight = param;
                    param += 1;
                    let bias = bias.then(|| {
                        param += 1;
                        param - 1
                    });
                    slots.push(FcSlot {
                        weight,
                        bias,
                        relu: false,
                        in_features: features,
                        out_features: *out_features,
                    });
                    features = *out_features;
                }
                LayerSpec::Relu => match slots.last_mut() {
                    Some(slot) if !slot.relu => slot.relu = true,
                    _ => return Err(Error::Spec(format!("layer {i}: ReLU must directly follow a linear layer"))),
                },
                other => return Err(Error::Spec(format!("layer {i} ({other:?}) is not fully connected"))),
            }
        }
        if self.input_shape.len() > 1 && self.layers.first() != Some(&LayerSpec::Flatten) {
            return Err(Error::Spec("multi-dimensional input must be flattened first".into()));
        }
        Ok(slots)
    }

    /// Index of the classification head's weight in the parameter list.
    pub fn head_weight_index(&self) -> Result<usize> {
        let infos = self.param_infos()?;
        let head_layer = self.layers.len() - 1;
        infos
            .iter()
            .position(|p| p.layer == head_layer && matches!(p.role, ParamRole::Weight { .. }))
            .ok_or_else(|| Error::Spec("no classification head".into()))
    }

    /// Traces the network on a batch `x` of shape `[N, ..input_shape]`.
    pub fn forward<'g>(&self, params: &[Var<'g>], x: Var<'g>) -> Result<Forward<'g>> {
        let mut shape = x.shape();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            return Err(Error::ShapeMismatch { op: "forward", lhs: shape, rhs: self.input_shape.clone() });
        }
        let batch = shape[0];
        let mut next = params.iter().copied();
        let mut take = || next.next().ok_or_else(|| Error::Spec("too few parameters".into()));
        let mut h = x;
        let mut head_input = x;
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            if i == last {
                head_input = h;
            }
            h = match layer {
                LayerSpec::Linear { bias, .. } => {
                    let w = take()?;
                    let y = h.matmul(w.t()?)?;
                    if *bias {
                        y.add_channel_bias(take()?)?
                    } else {
                        y
                    }
                }
                LayerSpec::Conv { stride, pad, padding, bias, skip, .. } => {
                    let w = take()?;
                    let mut y = h.conv2d(w, *stride, *pad, *padding)?;
                    if *bias {
                        y = y.add_channel_bias(take()?)?;
                    }
                    if *skip {
                        y = y.add(h)?;
                    }
                    y
                }
                LayerSpec::BatchNorm => {
                    let gamma = take()?;
                    let beta = take()?;
                    h.batch_norm(gamma, beta, BN_EPS)?
                }
                LayerSpec::Relu => h.relu()?,
                LayerSpec::Sigmoid => h.sigmoid()?,
                LayerSpec::MaxPool { kernel, stride } => h.max_pool(*kernel, *stride)?,
                LayerSpec::AvgPool { kernel, stride } => h.avg_pool(*kernel, *stride)?,
                LayerSpec::GlobalAvgPool => h.global_avg_pool()?,
                LayerSpec::Flatten => h.flatten()?,
                LayerSpec::Normalize { mean, std } => {
                    shape = h.shape();
                    let inner: usize = shape[2..].iter().product();
                    let graph = h.graph();
                    let scale: Vec<f64> = std.iter().map(|s| 1.0 / s).collect();
                    let shift: Vec<f64> = mean.iter().zip(std).map(|(m, s)| -m / s).collect();
                    let c = shape[1];
                    let scale = graph.constant(crate::Tensor::from_vec(scale)).broadcast_keep(batch, c, inner, &shape)?;
                    let shift = graph.constant(crate::Tensor::from_vec(shift)).broadcast_keep(batch, c, inner, &shape)?;
                    h.mul(scale)?.add(shift)?
                }
            };
        }
        if next.next().is_some() {
            return Err(Error::Spec("too many parameters".into()));
        }
        Ok(Forward { logits: h, head_input })
    }
}

/// Result of tracing a model.
#[derive(Debug, Clone, Copy)]
pub struct Forward<'g> {
    pub logits: Var<'g>,
    /// Input to the final (classification) layer.
    pub head_input: Var<'g>,
}
