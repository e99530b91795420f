//! Random chain models and datasets for invariant tests.

#![allow(dead_code)]

use ocnna_core::model::{ArchitectureSpec, LayerDesc};
use ocnna_core::ops::Padding;
use ocnna_core::{Layer, LabeledDataset, ModelGraph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// A random chain: one to three conv blocks (conv, optional batchnorm,
/// ReLU, optional pooling), flatten, an optional hidden dense layer, and a
/// dense head with optional softmax. Batchnorm statistics and biases are
/// randomized so pruning cannot hide behind identity parameters.
pub fn random_chain(seed: u64) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = rng.random_range(6..11);
    let channels = rng.random_range(1..4);
    let mut layers = Vec::new();
    let mut spatial = size;
    for _ in 0..rng.random_range(1..4) {
        let kernel = if rng.random_bool(0.7) { 3 } else { 1 };
        let padding = if rng.random_bool(0.7) || spatial < kernel + 1 { Padding::Same } else { Padding::Valid };
        let stride = if spatial >= 6 && rng.random_bool(0.25) { 2 } else { 1 };
        layers.push(LayerDesc::Conv2d {
            filters: rng.random_range(2..7),
            kernel,
            stride,
            padding,
        });
        spatial = match padding {
            Padding::Same => spatial.div_ceil(stride),
            Padding::Valid => (spatial - kernel) / stride + 1,
        };
        if rng.random_bool(0.4) {
            layers.push(LayerDesc::BatchNorm);
        }
        layers.push(LayerDesc::Relu);
        if spatial >= 4 && rng.random_bool(0.6) {
            layers.push(LayerDesc::MaxPool { window: 2, stride: 2 });
            spatial = (spatial - 2) / 2 + 1;
        }
    }
    layers.push(LayerDesc::Flatten);
    if rng.random_bool(0.4) {
        layers.push(LayerDesc::Dense {
            units: rng.random_range(3..9),
        });
        layers.push(LayerDesc::Relu);
    }
    layers.push(LayerDesc::Dense {
        units: rng.random_range(2..5),
    });
    if rng.random_bool(0.5) {
        layers.push(LayerDesc::Softmax);
    }
    let spec = ArchitectureSpec {
        name: format!("random-{seed}"),
        input_shape: [size, size, channels],
        layers,
    };
    let g = spec.build(seed).unwrap();
    let layers = g
        .layers()
        .iter()
        .cloned()
        .map(|l| match l {
            Layer::Conv2d(mut c) => {
                c.bias = random_tensor(&mut rng, c.bias.shape(), -0.2, 0.2);
                Layer::Conv2d(c)
            }
            Layer::Dense(mut d) => {
                d.bias = random_tensor(&mut rng, d.bias.shape(), -0.2, 0.2);
                Layer::Dense(d)
            }
            Layer::BatchNorm(mut b) => {
                let c = b.channels();
                b.gamma = random_tensor(&mut rng, &[c], 0.5, 1.5);
                b.beta = random_tensor(&mut rng, &[c], -0.3, 0.3);
                b.mean = random_tensor(&mut rng, &[c], -0.2, 0.2);
                b.var = random_tensor(&mut rng, &[c], 0.5, 2.0);
                Layer::BatchNorm(b)
            }
            other => other,
        })
        .collect();
    ModelGraph::new(g.name().to_string(), g.input_shape(), layers).unwrap()
}

/// Uniform random images in `[-1, 1)` with cycling labels.
pub fn random_dataset(shape: [usize; 3], n: usize, classes: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [h, w, c] = shape;
    let images = random_tensor(&mut rng, &[n, h, w, c], -1.0, 1.0);
    let labels = (0..n).map(|i| (i % classes) as u32).collect();
    LabeledDataset::new(images, labels, classes).unwrap()
}
