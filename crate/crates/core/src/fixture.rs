//! Frozen desk-scale experiment: the `tiny3` preset trained on the seeded
//! synthetic texture dataset.
//!
//! Every constant here is part of the fixture's identity. Changing one
//! changes the trained model and every number derived from it.

use crate::dataset::{split_dataset, LabeledDataset};
use crate::error::Result;
use crate::model::{preset, ModelGraph};
use crate::trainer::{make_synthetic_dataset, train, TrainConfig};

pub const CLASSES: usize = 3;
pub const IMAGE_SIZE: usize = 16;
pub const TRAIN_SIZE: usize = 2000;
pub const TEST_SIZE: usize = 500;
pub const DATA_SEED: u64 = 42;
pub const MODEL_SEED: u64 = 7;
pub const PRESET: &str = "tiny3";
/// Fraction of the training set held out for importance scoring.
pub const DVAR_FRACTION: f64 = 0.10;
pub const DVAR_SEED: u64 = 1;

/// Training schedule for the fixture. The step size is larger than
/// [`TrainConfig::default`] so ten epochs suffice, and the weight decay is
/// strong enough to concentrate the learned features in fewer filters.
pub fn train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.01,
        momentum: 0.9,
        weight_decay: 1e-2,
        batch_size: 64,
        epochs: 10,
        seed: MODEL_SEED,
    }
}

/// Train and test splits. Both come from one generated pool so they share
/// the same distribution; labels cycle through classes, so both are
/// balanced to within one image per class.
pub fn datasets() -> Result<(LabeledDataset, LabeledDataset)> {
    let per_class = (TRAIN_SIZE + TEST_SIZE).div_ceil(CLASSES);
    let pool = make_synthetic_dataset(CLASSES, per_class, IMAGE_SIZE, DATA_SEED)?;
    let train_set = pool.select(&(0..TRAIN_SIZE).collect::<Vec<_>>())?;
    let test_set = pool.select(&(TRAIN_SIZE..TRAIN_SIZE + TEST_SIZE).collect::<Vec<_>>())?;
    Ok((train_set, test_set))
}

pub fn untrained_model() -> Result<ModelGraph> {
    preset(PRESET, [IMAGE_SIZE, IMAGE_SIZE, 1], CLASSES)?.build(MODEL_SEED)
}

/// Everything the end-to-end checks need.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// Scoring subset of `train`.
    pub d_var: LabeledDataset,
    pub model: ModelGraph,
    pub loss_history: Vec<f64>,
}

/// Generates the data and trains the model. Deterministic; takes a few
/// seconds in an optimized build.
pub fn build() -> Result<Fixture> {
    let (train_set, test_set) = datasets()?;
    let (d_var, _) = split_dataset(&train_set, DVAR_FRACTION, DVAR_SEED)?;
    let (model, loss_history) = train(&untrained_model()?, &train_set, &train_config())?;
    Ok(Fixture {
        train: train_set,
        test: test_set,
        d_var,
        model,
        loss_history,
    })
}
