//! Accuracy, parameter counts and remaining-parameters ratio.

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::inference::{accuracy, predict_with_workers};
use crate::model::{count_parameters, ModelGraph};
use crate::parallel::default_workers;

/// Remaining-parameters ratio `1 - (np_o - np_s) / np_o`, i.e. `np_s / np_o`.
pub fn rpr(np_o: usize, np_s: usize) -> Result<f64> {
    if np_o == 0 {
        return Err(Error::InvalidArgument("original parameter count is zero".into()));
    }
    if np_s > np_o {
        return Err(Error::InvalidArgument(format!(
            "pruned model has more parameters ({np_s}) than the original ({np_o})"
        )));
    }
    Ok(np_s as f64 / np_o as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub base_accuracy: f64,
    pub pruned_accuracy: f64,
    /// `base - pruned` in percentage points; negative means the pruned
    /// model did better.
    pub acc_drop: f64,
    pub np_original: usize,
    pub np_pruned: usize,
    pub rpr: f64,
}

impl MetricsReport {
    pub fn new(base_accuracy: f64, pruned_accuracy: f64, np_original: usize, np_pruned: usize) -> Result<Self> {
        Ok(Self {
            base_accuracy,
            pruned_accuracy,
            acc_drop: (base_accuracy - pruned_accuracy) * 100.0,
            np_original,
            np_pruned,
            rpr: rpr(np_original, np_pruned)?,
        })
    }

    /// Plain-text table with the usual pruning-results columns, two decimals.
    pub fn to_table(&self) -> String {
        let header = format!(
            "{:>9} {:>9} {:>14} {:>9} {:>12} {:>12}",
            "Base (%)", "Acc. (%)", "Acc. Drop (%)", "RPR (%)", "Params (O)", "Params (S)"
        );
        let row = format!(
            "{:>9.2} {:>9.2} {:>14.2} {:>9.2} {:>12} {:>12}",
            self.base_accuracy * 100.0,
            self.pruned_accuracy * 100.0,
            self.acc_drop,
            self.rpr * 100.0,
            self.np_original,
            self.np_pruned
        );
        format!("{header}\n{row}\n")
    }
}

pub fn evaluate(original: &ModelGraph, pruned: &ModelGraph, test: &LabeledDataset) -> Result<MetricsReport> {
    evaluate_with_workers(original, pruned, test, 64, default_workers())
}

pub fn evaluate_with_workers(
    original: &ModelGraph,
    pruned: &ModelGraph,
    test: &LabeledDataset,
    batch_size: usize,
    workers: usize,
) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let base = accuracy(&predict_with_workers(original, test, batch_size, workers)?, test.labels())?;
    let after = accuracy(&predict_with_workers(pruned, test, batch_size, workers)?, test.labels())?;
    MetricsReport::new(base, after, count_parameters(original), count_parameters(pruned))
}
