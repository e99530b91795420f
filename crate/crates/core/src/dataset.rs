//! Labeled image datasets and stratified splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Tensor,
    labels: Vec<u32>,
    class_count: usize,
}

impl LabeledDataset {
    /// `images` is NHWC; one label per image, each below `class_count`.
    pub fn new(images: Tensor, labels: Vec<u32>, class_count: usize) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::dim(
                "dataset",
                format!("images must be [N, H, W, C], got {:?}", images.shape()),
            ));
        }
        if images.batch() != labels.len() {
            return Err(Error::dim(
                "dataset",
                format!("{} images but {} labels", images.batch(), labels.len()),
            ));
        }
        if class_count == 0 {
            return Err(Error::InvalidArgument("class_count must be positive".into()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= class_count) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Self {
            images,
            labels,
            class_count,
        })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[H, W, C]` of a single image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Subset in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let images = self.images.select_batch(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(images, labels, self.class_count)
    }

    /// Number of samples per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }
}

/// Stratified split: from each class, `round(fraction * count)` samples go
/// to the first part and the rest to the second. Both parts keep the
/// original sample order. Deterministic in `seed`.
///
/// Every class present must have at least `1 / fraction` samples.
pub fn split_dataset(d: &LabeledDataset, fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("split fraction {fraction} must lie in (0, 1)")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); d.class_count()];
    for (i, &l) in d.labels().iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (class, mut idx) in by_class.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let count = idx.len();
        if (count as f64) * fraction < 1.0 - 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "class {class} has {count} samples; fraction {fraction} needs at least {}",
                (1.0 / fraction).ceil()
            )));
        }
        let take = ((count as f64 * fraction).round() as usize).clamp(1, count.saturating_sub(1).max(1));
        idx.shuffle(&mut rng);
        first.extend_from_slice(&idx[..take]);
        second.extend_from_slice(&idx[take..]);
    }
    if second.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} leaves the second part empty"
        )));
    }
    first.sort_unstable();
    second.sort_unstable();
    Ok((d.select(&first)?, d.select(&second)?))
}
