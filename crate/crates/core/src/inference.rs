//! Batched forward passes, predictions, and per-filter activation capture.

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{Layer, ModelGraph};
use crate::parallel::{default_workers, try_par_map_indexed};
use crate::tensor::{Matrix, Tensor};

/// Output maps of one conv layer: `per_filter[m][i]` is the `H' x W'` map
/// of filter `m` on image `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCapture {
    pub layer_index: usize,
    pub per_filter: Vec<Vec<Matrix>>,
}

impl ActivationCapture {
    pub fn filters(&self) -> usize {
        self.per_filter.len()
    }

    pub fn images(&self) -> usize {
        self.per_filter.first().map_or(0, Vec::len)
    }

    /// Splits an NHWC activation tensor into per-channel maps.
    pub fn from_activations(layer_index: usize, act: &Tensor) -> Result<Self> {
        if act.rank() != 4 {
            return Err(Error::dim(
                "capture",
                format!("expected NHWC activations, got {:?}", act.shape()),
            ));
        }
        let (n, h, w, c) = (act.shape()[0], act.shape()[1], act.shape()[2], act.shape()[3]);
        let data = act.data();
        let per_filter = (0..c)
            .map(|m| {
                (0..n)
                    .map(|i| {
                        let base = i * h * w * c;
                        let map = (0..h * w).map(|p| data[base + p * c + m]).collect();
                        Matrix::from_parts(h, w, map)
                    })
                    .collect()
            })
            .collect();
        Ok(Self { layer_index, per_filter })
    }
}

fn check_input(g: &ModelGraph, d: &LabeledDataset) -> Result<()> {
    if d.image_shape() != g.input_shape() {
        return Err(Error::dim(
            "predict",
            format!(
                "dataset images are {:?} but model `{}` expects {:?}",
                d.image_shape(),
                g.name(),
                g.input_shape()
            ),
        ));
    }
    Ok(())
}

/// Applies layers `range` to `x` in batches of `batch_size`, evaluated by up
/// to `workers` threads. The result does not depend on either parameter.
pub fn forward_batched(
    g: &ModelGraph,
    x: &Tensor,
    range: std::ops::Range<usize>,
    batch_size: usize,
    workers: usize,
) -> Result<Tensor> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let n = x.batch();
    let chunks = n.div_ceil(batch_size);
    let parts = try_par_map_indexed(chunks, workers, |c| {
        let batch = x.slice_batch(c * batch_size..((c + 1) * batch_size).min(n))?;
        g.forward_range(&batch, range.clone())
    })?;
    Tensor::concat_batch(&parts)
}

/// Index of the largest entry in each row; ties go to the lower index.
pub fn argmax_rows(out: &Tensor) -> Result<Vec<usize>> {
    if out.rank() != 2 {
        return Err(Error::dim("argmax", format!("expected [N, C] output, got {:?}", out.shape())));
    }
    let c = out.shape()[1];
    Ok(out
        .data()
        .chunks_exact(c)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// Predicted class per image, using all logical CPUs.
pub fn predict(g: &ModelGraph, d: &LabeledDataset, batch_size: usize) -> Result<Vec<usize>> {
    predict_with_workers(g, d, batch_size, default_workers())
}

pub fn predict_with_workers(g: &ModelGraph, d: &LabeledDataset, batch_size: usize, workers: usize) -> Result<Vec<usize>> {
    check_input(g, d)?;
    let out = forward_batched(g, d.images(), 0..g.layers().len(), batch_size, workers)?;
    argmax_rows(&out)
}

/// Last layer index included in the captured map of conv layer
/// `layer_index`: the conv itself plus any directly following batchnorm or
/// ReLU layers. Pooling is never included.
pub fn capture_end(g: &ModelGraph, layer_index: usize) -> Result<usize> {
    let layer = g.layers().get(layer_index).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "layer index {layer_index} out of range ({} layers)",
            g.layers().len()
        ))
    })?;
    if !matches!(layer, Layer::Conv2d(_)) {
        return Err(Error::NotConv {
            index: layer_index,
            kind: layer.kind(),
        });
    }
    let mut end = layer_index;
    while g.layers().get(end + 1).is_some_and(Layer::is_elementwise) {
        end += 1;
    }
    Ok(end)
}

/// Captures the post-activation output maps of conv layer `layer_index`
/// over every image of `d`.
pub fn capture_activations(g: &ModelGraph, d: &LabeledDataset, layer_index: usize) -> Result<ActivationCapture> {
    check_input(g, d)?;
    let end = capture_end(g, layer_index)?;
    let act = forward_batched(g, d.images(), 0..end + 1, 64, default_workers())?;
    ActivationCapture::from_activations(layer_index, &act)
}

/// Runs `d` through the chain once, handing each conv layer's capture to
/// `visit` in chain order. Only the current layer's activations are kept
/// in memory.
pub fn for_each_capture(
    g: &ModelGraph,
    d: &LabeledDataset,
    batch_size: usize,
    workers: usize,
    mut visit: impl FnMut(ActivationCapture) -> Result<()>,
) -> Result<()> {
    check_input(g, d)?;
    let mut act = d.images().clone();
    let mut done = 0;
    for conv in g.conv_indices() {
        let end = capture_end(g, conv)?;
        act = forward_batched(g, &act, done..end + 1, batch_size, workers)?;
        done = end + 1;
        visit(ActivationCapture::from_activations(conv, &act)?)?;
    }
    Ok(())
}

/// Fraction of predictions equal to their label.
pub fn accuracy(predictions: &[usize], labels: &[u32]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::dim(
            "accuracy",
            format!("{} predictions vs {} labels", predictions.len(), labels.len()),
        ));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(&p, &l)| p == l as usize)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}
