//! Structured pruning of convolutional networks by filter output variability.
//!
//! Each conv filter is scored on a held-out dataset: for every image the
//! filter's output map goes through PCA (95% retained variance), the
//! projection is summarized by its Frobenius norm, and the filter's score is
//! the coefficient of variation of those norms across images. Filters below
//! the `k`-th percentile of importance are removed and the surviving weights
//! are copied into a smaller model without retraining.
//!
//! Only chain (VGG-style) topologies are supported.

pub mod dataset;
pub mod error;
pub mod fixture;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod parallel;
pub mod pruner;
pub mod scoring;
pub mod tensor;
pub mod trainer;

pub use dataset::{split_dataset, LabeledDataset};
pub use error::{Error, Result};
pub use inference::{accuracy, capture_activations, predict, ActivationCapture};
pub use metrics::{evaluate, rpr, MetricsReport};
pub use model::{count_parameters, Layer, ModelGraph};
pub use pruner::{apply_prune, ocnna, plan_prune, PruneConfig, PrunePlan};
pub use scoring::{coefficient_of_variation, frobenius_norm, pca_95, score_layer, select_filters, ImportanceReport};
pub use tensor::{Matrix, Tensor};
pub use trainer::{make_synthetic_dataset, train, TrainConfig};
