//! Chain-topology network graphs, shape inference, and parameter counting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{self, conv_out_dim, Padding};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[kh, kw, cin, cout]`
    pub kernel: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: Padding,
}

impl Conv2d {
    pub fn filters(&self) -> usize {
        self.kernel.shape()[3]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[in, out]`
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn units(&self) -> usize {
        self.weights.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub mean: Tensor,
    pub var: Tensor,
    pub eps: f32,
}

impl BatchNorm {
    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    MaxPool { window: usize, stride: usize },
    Dense(Dense),
    Flatten,
    Relu,
    Softmax,
    BatchNorm(BatchNorm),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::MaxPool { .. } => "maxpool",
            Layer::Dense(_) => "dense",
            Layer::Flatten => "flatten",
            Layer::Relu => "relu",
            Layer::Softmax => "softmax",
            Layer::BatchNorm(_) => "batchnorm",
        }
    }

    pub fn as_conv(&self) -> Option<&Conv2d> {
        match self {
            Layer::Conv2d(c) => Some(c),
            _ => None,
        }
    }

    /// Trainable element count: kernels, weights, biases and batchnorm
    /// affine terms. Running statistics are not counted.
    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv2d(c) => c.kernel.len() + c.bias.len(),
            Layer::Dense(d) => d.weights.len() + d.bias.len(),
            Layer::BatchNorm(b) => b.gamma.len() + b.beta.len(),
            _ => 0,
        }
    }

    /// Every stored tensor, with a stable name per slot.
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Layer::Conv2d(c) => vec![("kernel", &c.kernel), ("bias", &c.bias)],
            Layer::Dense(d) => vec![("weights", &d.weights), ("bias", &d.bias)],
            Layer::BatchNorm(b) => vec![("gamma", &b.gamma), ("beta", &b.beta), ("mean", &b.mean), ("var", &b.var)],
            _ => Vec::new(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(c) => ops::conv2d_forward(x, &c.kernel, &c.bias, c.stride, c.padding),
            Layer::MaxPool { window, stride } => ops::maxpool2d(x, *window, *stride),
            Layer::Dense(d) => ops::dense_forward(x, &d.weights, &d.bias),
            Layer::Flatten => Ok(ops::flatten(x)),
            Layer::Relu => Ok(ops::relu(x)),
            Layer::Softmax => ops::softmax(x),
            Layer::BatchNorm(b) => ops::batchnorm_forward(x, &b.gamma, &b.beta, &b.mean, &b.var, b.eps),
        }
    }

    /// Elementwise layers that keep channel alignment with the preceding conv.
    pub fn is_elementwise(&self) -> bool {
        matches!(self, Layer::Relu | Layer::BatchNorm(_))
    }
}

/// Per-sample activation shape flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActShape {
    Spatial { h: usize, w: usize, c: usize },
    Flat(usize),
}

impl ActShape {
    pub fn channels(&self) -> usize {
        match *self {
            ActShape::Spatial { c, .. } => c,
            ActShape::Flat(f) => f,
        }
    }

    pub fn elements(&self) -> usize {
        match *self {
            ActShape::Spatial { h, w, c } => h * w * c,
            ActShape::Flat(f) => f,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            ActShape::Spatial { h, w, c } => vec![h, w, c],
            ActShape::Flat(f) => vec![f],
        }
    }
}

impl std::fmt::Display for ActShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ActShape::Spatial { h, w, c } => write!(f, "{h}x{w}x{c}"),
            ActShape::Flat(n) => write!(f, "{n}"),
        }
    }
}

/// A single chain of layers applied to `[H, W, C]` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    name: String,
    input_shape: [usize; 3],
    layers: Vec<Layer>,
}

impl ModelGraph {
    /// Builds a graph and runs shape inference over it.
    pub fn new(name: impl Into<String>, input_shape: [usize; 3], layers: Vec<Layer>) -> Result<Self> {
        let g = Self {
            name: name.into(),
            input_shape,
            layers,
        };
        g.infer_shapes()?;
        Ok(g)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    /// Indices of conv layers, in chain order.
    pub fn conv_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.as_conv().map(|_| i))
            .collect()
    }

    /// Width of the final output.
    pub fn output_units(&self) -> Result<usize> {
        Ok(self.infer_shapes()?.last().expect("input shape").elements())
    }

    /// Static shape pass. Returns the activation shape before the first
    /// layer followed by the shape after each layer.
    pub fn infer_shapes(&self) -> Result<Vec<ActShape>> {
        let [h, w, c] = self.input_shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::ShapeInference {
                from: "input".into(),
                to: "layer 0".into(),
                detail: format!("input shape {:?} has a zero axis", self.input_shape),
            });
        }
        let mut shapes = vec![ActShape::Spatial { h, w, c }];
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = *shapes.last().expect("non-empty");
            let fail = |detail: String| Error::ShapeInference {
                from: if i == 0 {
                    format!("input ({cur})")
                } else {
                    format!("layer {} ({}, output {cur})", i - 1, self.layers[i - 1].kind())
                },
                to: format!("layer {i} ({})", layer.kind()),
                detail,
            };
            let next = match (layer, cur) {
                (Layer::Conv2d(conv), ActShape::Spatial { h, w, c }) => {
                    let ks = conv.kernel.shape();
                    if conv.kernel.rank() != 4 {
                        return Err(fail(format!("kernel must be rank 4, got {ks:?}")));
                    }
                    if ks[2] != c {
                        return Err(fail(format!("kernel expects {} input channels, got {c}", ks[2])));
                    }
                    if conv.bias.shape() != [ks[3]] {
                        return Err(fail(format!(
                            "bias shape {:?} does not match {} filters",
                            conv.bias.shape(),
                            ks[3]
                        )));
                    }
                    let (oh, _) = conv_out_dim(h, ks[0], conv.stride, conv.padding)
                        .ok_or_else(|| fail(format!("kernel {}x{} does not fit {h}x{w}", ks[0], ks[1])))?;
                    let (ow, _) = conv_out_dim(w, ks[1], conv.stride, conv.padding)
                        .ok_or_else(|| fail(format!("kernel {}x{} does not fit {h}x{w}", ks[0], ks[1])))?;
                    ActShape::Spatial { h: oh, w: ow, c: ks[3] }
                }
                (Layer::MaxPool { window, stride }, ActShape::Spatial { h, w, c }) => {
                    if *window == 0 || *stride == 0 || *window > h || *window > w {
                        return Err(fail(format!("pool window {window} stride {stride} invalid for {h}x{w}")));
                    }
                    ActShape::Spatial {
                        h: (h - window) / stride + 1,
                        w: (w - window) / stride + 1,
                        c,
                    }
                }
                (Layer::Dense(d), ActShape::Flat(f)) => {
                    let ws = d.weights.shape();
                    if d.weights.rank() != 2 || ws[0] != f {
                        return Err(fail(format!("dense expects {} inputs, got {f}", ws[0])));
                    }
                    if d.bias.shape() != [ws[1]] {
                        return Err(fail(format!("bias shape {:?} does not match {} units", d.bias.shape(), ws[1])));
                    }
                    ActShape::Flat(ws[1])
                }
                (Layer::Flatten, s) => ActShape::Flat(s.elements()),
                (Layer::Relu, s) => s,
                (Layer::Softmax, ActShape::Flat(f)) => ActShape::Flat(f),
                (Layer::BatchNorm(b), s) => {
                    for (name, t) in [("gamma", &b.gamma), ("beta", &b.beta), ("mean", &b.mean), ("var", &b.var)] {
                        if t.shape() != [s.channels()] {
                            return Err(fail(format!(
                                "batchnorm {name} has shape {:?}, input has {} channels",
                                t.shape(),
                                s.channels()
                            )));
                        }
                    }
                    s
                }
                (Layer::Dense(d), s @ ActShape::Spatial { .. }) => {
                    return Err(fail(format!(
                        "dense expects {} flat inputs, got spatial {s} (missing flatten?)",
                        d.weights.shape()[0]
                    )))
                }
                (l, s) => return Err(fail(format!("{} cannot consume {s}", l.kind()))),
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Runs the whole chain on an NHWC batch.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_range(x, 0..self.layers.len())
    }

    /// Runs layers `range` on `x`.
    pub fn forward_range(&self, x: &Tensor, range: std::ops::Range<usize>) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers[range] {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }
}

/// Sum of trainable element counts over all layers.
pub fn count_parameters(g: &ModelGraph) -> usize {
    g.layers().iter().map(Layer::param_count).sum()
}

/// Architecture description used for presets and JSON model specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerDesc {
    Conv2d {
        filters: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default = "same")]
        padding: Padding,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    Dense {
        units: usize,
    },
    Flatten,
    Relu,
    Softmax,
    BatchNorm,
}

fn one() -> usize {
    1
}

fn same() -> Padding {
    Padding::Same
}

/// Serializable architecture: input shape plus layer list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub name: String,
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerDesc>,
}

impl ArchitectureSpec {
    /// Instantiates the architecture with He-uniform weights, zero biases,
    /// and identity batchnorm statistics.
    pub fn build(&self, seed: u64) -> Result<ModelGraph> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = ActShape::Spatial {
            h: self.input_shape[0],
            w: self.input_shape[1],
            c: self.input_shape[2],
        };
        let mut layers = Vec::with_capacity(self.layers.len());
        for desc in &self.layers {
            let layer = match *desc {
                LayerDesc::Conv2d {
                    filters,
                    kernel,
                    stride,
                    padding,
                } => {
                    let cin = shape.channels();
                    let fan_in = kernel * kernel * cin;
                    Layer::Conv2d(Conv2d {
                        kernel: he_uniform(&mut rng, vec![kernel, kernel, cin, filters], fan_in)?,
                        bias: Tensor::zeros(&[filters])?,
                        stride,
                        padding,
                    })
                }
                LayerDesc::MaxPool { window, stride } => Layer::MaxPool { window, stride },
                LayerDesc::Dense { units } => {
                    let f = shape.elements();
                    Layer::Dense(Dense {
                        weights: he_uniform(&mut rng, vec![f, units], f)?,
                        bias: Tensor::zeros(&[units])?,
                    })
                }
                LayerDesc::Flatten => Layer::Flatten,
                LayerDesc::Relu => Layer::Relu,
                LayerDesc::Softmax => Layer::Softmax,
                LayerDesc::BatchNorm => {
                    let c = shape.channels();
                    Layer::BatchNorm(BatchNorm {
                        gamma: Tensor::full(&[c], 1.0)?,
                        beta: Tensor::zeros(&[c])?,
                        mean: Tensor::zeros(&[c])?,
                        var: Tensor::full(&[c], 1.0)?,
                        eps: 1e-5,
                    })
                }
            };
            layers.push(layer);
            // Re-run inference on the prefix to get the next input shape.
            let partial = ModelGraph::new(self.name.clone(), self.input_shape, layers.clone())?;
            shape = *partial.infer_shapes()?.last().expect("non-empty");
        }
        ModelGraph::new(self.name.clone(), self.input_shape, layers)
    }

    /// Parameter count of the architecture without allocating weights.
    pub fn param_count(&self) -> Result<usize> {
        let mut shape = ActShape::Spatial {
            h: self.input_shape[0],
            w: self.input_shape[1],
            c: self.input_shape[2],
        };
        let mut total = 0;
        for desc in &self.layers {
            match *desc {
                LayerDesc::Conv2d {
                    filters,
                    kernel,
                    stride,
                    padding,
                } => {
                    let ActShape::Spatial { h, w, c } = shape else {
                        return Err(Error::InvalidArgument("conv2d after flatten".into()));
                    };
                    total += kernel * kernel * c * filters + filters;
                    let (oh, _) = conv_out_dim(h, kernel, stride, padding)
                        .ok_or_else(|| Error::InvalidArgument("kernel larger than input".into()))?;
                    let (ow, _) = conv_out_dim(w, kernel, stride, padding)
                        .ok_or_else(|| Error::InvalidArgument("kernel larger than input".into()))?;
                    shape = ActShape::Spatial { h: oh, w: ow, c: filters };
                }
                LayerDesc::MaxPool { window, stride } => {
                    let ActShape::Spatial { h, w, c } = shape else {
                        return Err(Error::InvalidArgument("maxpool after flatten".into()));
                    };
                    if window > h || window > w || stride == 0 {
                        return Err(Error::InvalidArgument("pool window larger than input".into()));
                    }
                    shape = ActShape::Spatial {
                        h: (h - window) / stride + 1,
                        w: (w - window) / stride + 1,
                        c,
                    };
                }
                LayerDesc::Dense { units } => {
                    total += shape.elements() * units + units;
                    shape = ActShape::Flat(units);
                }
                LayerDesc::Flatten => shape = ActShape::Flat(shape.elements()),
                LayerDesc::BatchNorm => total += 2 * shape.channels(),
                LayerDesc::Relu | LayerDesc::Softmax => {}
            }
        }
        Ok(total)
    }
}

fn he_uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Result<Tensor> {
    let limit = (6.0 / fan_in as f64).sqrt() as f32;
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(shape, data)
}

/// Names accepted by [`preset`].
pub const PRESETS: &[&str] = &["tiny3", "tiny3bn"];

/// Built-in architectures.
///
/// `tiny3`: three 3x3 conv layers with 16 filters each, every one followed
/// by ReLU and 2x2 max pooling, then a dense classification head.
/// `tiny3bn` is the same with batchnorm between each conv and its ReLU.
pub fn preset(name: &str, input_shape: [usize; 3], classes: usize) -> Result<ArchitectureSpec> {
    let conv = || LayerDesc::Conv2d {
        filters: 16,
        kernel: 3,
        stride: 1,
        padding: Padding::Same,
    };
    let pool = || LayerDesc::MaxPool { window: 2, stride: 2 };
    let with_bn = match name {
        "tiny3" => false,
        "tiny3bn" => true,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown preset `{other}` (known: {})",
                PRESETS.join(", ")
            )))
        }
    };
    let mut layers = Vec::new();
    for _ in 0..3 {
        layers.push(conv());
        if with_bn {
            layers.push(LayerDesc::BatchNorm);
        }
        layers.push(LayerDesc::Relu);
        layers.push(pool());
    }
    layers.extend([LayerDesc::Flatten, LayerDesc::Dense { units: classes }, LayerDesc::Softmax]);
    Ok(ArchitectureSpec {
        name: name.to_string(),
        input_shape,
        layers,
    })
}
