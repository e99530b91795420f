//! Minimal SGD trainer and synthetic texture datasets for desk-scale fixtures.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{Layer, ModelGraph};
use crate::ops;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 1e-6,
            batch_size: 64,
            epochs: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        Ok(())
    }
}

/// Gradients of one layer's trainable tensors, in `Layer::tensors` order.
type LayerGrads = Vec<Tensor>;

/// Forward over `layers`, keeping every layer input for the backward pass.
fn forward_cached(layers: &[Layer], x: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut cur = x.clone();
    for layer in layers {
        let next = layer.forward(&cur)?;
        inputs.push(cur);
        cur = next;
    }
    Ok((inputs, cur))
}

/// Backpropagates `grad` through one layer. Returns the input gradient and
/// the trainable-parameter gradients.
pub fn layer_backward(layer: &Layer, input: &Tensor, output: &Tensor, grad: &Tensor) -> Result<(Tensor, LayerGrads)> {
    Ok(match layer {
        Layer::Conv2d(c) => {
            let (gx, gk, gb) = ops::conv2d_backward(input, &c.kernel, &c.bias, c.stride, c.padding, grad)?;
            (gx, vec![gk, gb])
        }
        Layer::Dense(d) => {
            let (gx, gw, gb) = ops::dense_backward(input, &d.weights, &d.bias, grad)?;
            (gx, vec![gw, gb])
        }
        Layer::BatchNorm(b) => {
            let (gx, gg, gb) = ops::batchnorm_backward(input, &b.gamma, &b.beta, &b.mean, &b.var, b.eps, grad)?;
            (gx, vec![gg, gb])
        }
        Layer::MaxPool { window, stride } => (ops::maxpool2d_backward(input, *window, *stride, grad)?, vec![]),
        Layer::Relu => (ops::relu_backward(input, grad)?, vec![]),
        Layer::Softmax => (ops::softmax_backward(output, grad)?, vec![]),
        Layer::Flatten => (grad.reshape(input.shape().to_vec())?, vec![]),
    })
}

/// Mutable views of a layer's trainable tensors, matching [`layer_backward`].
fn trainable_mut(layer: &mut Layer) -> Vec<&mut Tensor> {
    match layer {
        Layer::Conv2d(c) => vec![&mut c.kernel, &mut c.bias],
        Layer::Dense(d) => vec![&mut d.weights, &mut d.bias],
        Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
        _ => vec![],
    }
}

/// Mean cross-entropy of a batch and the gradients of every layer. A
/// trailing softmax is folded into the loss.
pub fn loss_and_grads(layers: &[Layer], x: &Tensor, labels: &[u32]) -> Result<(f64, Vec<LayerGrads>)> {
    let body = match layers.last() {
        Some(Layer::Softmax) => &layers[..layers.len() - 1],
        _ => layers,
    };
    let (inputs, logits) = forward_cached(body, x)?;
    let (loss, mut grad) = ops::softmax_cross_entropy(&logits, labels)?;
    let mut grads = vec![Vec::new(); layers.len()];
    for i in (0..body.len()).rev() {
        let output = if i + 1 < body.len() { &inputs[i + 1] } else { &logits };
        let (gx, gp) = layer_backward(&body[i], &inputs[i], output, &grad)?;
        grads[i] = gp;
        grad = gx;
    }
    Ok((loss, grads))
}

/// SGD with momentum and decoupled weight decay on softmax cross-entropy.
///
/// Per step and parameter: `v = momentum * v + g`, then
/// `p = p - weight_decay * p - learning_rate * v`. Returns the trained model
/// and the mean training loss of each epoch.
pub fn train(g: &ModelGraph, d: &LabeledDataset, cfg: &TrainConfig) -> Result<(ModelGraph, Vec<f64>)> {
    cfg.validate()?;
    let units = g.output_units()?;
    if units != d.class_count() {
        return Err(Error::InvalidArgument(format!(
            "model has {units} outputs but the dataset has {} classes",
            d.class_count()
        )));
    }
    if d.image_shape() != g.input_shape() {
        return Err(Error::dim(
            "train",
            format!("dataset images are {:?}, model expects {:?}", d.image_shape(), g.input_shape()),
        ));
    }
    let mut model = g.clone();
    let mut velocity: Vec<Vec<Vec<f64>>> = model
        .layers()
        .iter()
        .map(|l| match l {
            Layer::Conv2d(_) | Layer::Dense(_) | Layer::BatchNorm(_) => {
                l.tensors().iter().take(2).map(|(_, t)| vec![0.0; t.len()]).collect()
            }
            _ => Vec::new(),
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..d.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let (lr, mu, wd) = (cfg.learning_rate, cfg.momentum, cfg.weight_decay);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = d.images().select_batch(idx)?;
            let labels: Vec<u32> = idx.iter().map(|&i| d.labels()[i]).collect();
            let (loss, grads) = loss_and_grads(model.layers(), &x, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss });
            }
            total += loss * idx.len() as f64;
            for ((layer, lg), lv) in model.layers_mut().iter_mut().zip(&grads).zip(&mut velocity) {
                for ((param, grad), vel) in trainable_mut(layer).into_iter().zip(lg).zip(lv.iter_mut()) {
                    for ((p, &gr), v) in param.data_mut().iter_mut().zip(grad.data()).zip(vel.iter_mut()) {
                        *v = mu * *v + f64::from(gr);
                        let pv = f64::from(*p);
                        *p = (pv - wd * pv - lr * *v) as f32;
                    }
                }
            }
        }
        let mean = total / d.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: 0,
                loss: mean,
            });
        }
        history.push(mean);
    }
    if model
        .layers()
        .iter()
        .flat_map(|l| l.tensors())
        .any(|(_, t)| t.data().iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Diverged {
            epoch: cfg.epochs - 1,
            batch: 0,
            loss: f64::NAN,
        });
    }
    Ok((model, history))
}

/// Grayscale `size x size` oriented-grating images, one orientation and
/// spatial frequency per class, with random phase, contrast, and additive
/// Gaussian noise. Labels cycle through the classes.
pub fn make_synthetic_dataset(classes: usize, per_class: usize, size: usize, seed: u64) -> Result<LabeledDataset> {
    make_texture_dataset(classes, per_class, size, SYNTHETIC_NOISE_STD, seed)
}

/// Standard deviation of the pixel noise used by [`make_synthetic_dataset`].
pub const SYNTHETIC_NOISE_STD: f64 = 0.8;

/// [`make_synthetic_dataset`] with an explicit pixel-noise level.
pub fn make_texture_dataset(classes: usize, per_class: usize, size: usize, noise_std: f64, seed: u64) -> Result<LabeledDataset> {
    if classes == 0 || per_class == 0 || size == 0 {
        return Err(Error::InvalidArgument(
            "classes, per_class and size must all be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std)
        .map_err(|_| Error::InvalidArgument(format!("noise std {noise_std} must be finite and non-negative")))?;
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * size * size);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        let theta = PI * class as f64 / classes as f64 + rng.random_range(-0.12..0.12);
        let freq = 0.08 + 0.24 * class as f64 / classes as f64 + rng.random_range(-0.01..0.01);
        let phase = rng.random_range(0.0..2.0 * PI);
        let contrast = rng.random_range(0.6..1.2);
        let (c, s) = (theta.cos(), theta.sin());
        for y in 0..size {
            for x in 0..size {
                let u = x as f64 * c + y as f64 * s;
                let v = contrast * (2.0 * PI * freq * u + phase).sin() + noise.sample(&mut rng);
                data.push(v as f32);
            }
        }
        labels.push(class as u32);
    }
    LabeledDataset::new(Tensor::new(vec![n, size, size, 1], data)?, labels, classes)
}
