//! Filter importance: per-image PCA, Frobenius norm of the projection, and
//! the coefficient of variation of those norms across images.
//!
//! A filter whose summarized output barely changes from image to image gets
//! a low score and is the first to be pruned.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::ActivationCapture;
use crate::parallel::try_par_map_indexed;
use crate::tensor::Matrix;

/// Fraction of total variance the retained components must explain.
pub const RETAINED_VARIANCE: f64 = 0.95;

/// Relative size below which total variance is treated as zero.
const ZERO_VARIANCE_RTOL: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    /// Centered observations projected onto the retained components
    /// (`rows x component_count`). Empty when the input has no variance.
    pub scores: DMatrix<f64>,
    /// Retained components as columns (`cols x component_count`).
    pub components: DMatrix<f64>,
    /// Share of each eigenvalue in the total, sorted descending.
    pub explained_variance_ratio: Vec<f64>,
    pub retained_variance_ratio: f64,
    pub component_count: usize,
}

/// PCA keeping the fewest components that explain at least 95% of the
/// variance.
///
/// Rows are observations and columns are variables. Components are the
/// eigenvectors of the column covariance, sorted by eigenvalue, with each
/// component's largest-magnitude coordinate made positive.
pub fn pca_95(map: &Matrix) -> Result<PcaResult> {
    let (h, w) = (map.rows(), map.cols());
    if map.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "pca input".into(),
        });
    }
    let x = DMatrix::from_row_iterator(h, w, map.data().iter().map(|&v| f64::from(v)));
    let mean_square = x.iter().map(|v| v * v).sum::<f64>() / (h * w) as f64;

    let mut xc = x;
    for mut col in xc.column_iter_mut() {
        let mean = col.iter().sum::<f64>() / h as f64;
        col.iter_mut().for_each(|v| *v -= mean);
    }
    let denom = h.saturating_sub(1).max(1) as f64;
    let cov = (xc.transpose() * &xc) / denom;
    let total: f64 = cov.diagonal().iter().sum();

    if total <= ZERO_VARIANCE_RTOL * mean_square || mean_square == 0.0 {
        return Ok(PcaResult {
            scores: DMatrix::zeros(h, 0),
            components: DMatrix::zeros(w, 0),
            explained_variance_ratio: vec![0.0; w],
            retained_variance_ratio: 1.0,
            component_count: 0,
        });
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..w).collect();
    let values: Vec<f64> = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let eig_total: f64 = values.iter().sum();
    let explained: Vec<f64> = order.iter().map(|&i| values[i] / eig_total).collect();

    let mut cumulative = 0.0;
    let mut count = 0;
    for r in &explained {
        cumulative += r;
        count += 1;
        if cumulative >= RETAINED_VARIANCE {
            break;
        }
    }

    let mut components = DMatrix::zeros(w, count);
    for (j, &src) in order.iter().take(count).enumerate() {
        let v = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for i in 1..w {
            if v[i].abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..w {
            components[(i, j)] = sign * v[i];
        }
    }
    let scores = &xc * &components;
    Ok(PcaResult {
        scores,
        components,
        explained_variance_ratio: explained,
        retained_variance_ratio: cumulative.min(1.0),
        component_count: count,
    })
}

/// Square root of the sum of squared entries.
pub fn frobenius_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Frobenius norm through `sqrt(trace(A Aᵀ))`. Agrees with
/// [`frobenius_norm`] up to rounding.
pub fn frobenius_norm_trace(m: &DMatrix<f64>) -> f64 {
    let gram = m * m.transpose();
    gram.trace().max(0.0).sqrt()
}

/// Population standard deviation over mean. Zero when the mean is zero,
/// which is how a filter that never fires is scored.
pub fn coefficient_of_variation(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("coefficient of variation of an empty vector".into()));
    }
    if let Some(bad) = xs.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::NonFinite {
            context: format!("coefficient of variation input {bad} (expected finite, non-negative norms)"),
        });
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Ok(0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

/// Per-image norms and the resulting score of one filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTrace {
    pub per_image_norms: Vec<f64>,
    pub cv: f64,
}

pub fn score_filter(maps: &[Matrix]) -> Result<ScoreTrace> {
    let per_image_norms = maps
        .iter()
        .map(|m| pca_95(m).map(|p| frobenius_norm(&p.scores)))
        .collect::<Result<Vec<_>>>()?;
    let cv = coefficient_of_variation(&per_image_norms)?;
    Ok(ScoreTrace { per_image_norms, cv })
}

/// Importance score of every filter in a captured layer. Filters are scored
/// on up to `workers` threads; the result is identical for any worker count.
pub fn score_layer(capture: &ActivationCapture, workers: usize) -> Result<Vec<f64>> {
    if capture.filters() == 0 || capture.images() == 0 {
        return Err(Error::InvalidArgument(format!(
            "empty capture for layer {}",
            capture.layer_index
        )));
    }
    try_par_map_indexed(capture.filters(), workers, |m| {
        score_filter(&capture.per_filter[m])
            .map(|t| t.cv)
            .map_err(|e| Error::Filter {
                filter: m,
                source: Box::new(e),
            })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub layer_index: usize,
    pub scores: Vec<f64>,
    pub keep_mask: Vec<bool>,
    /// Lowest score among the kept filters.
    pub threshold: f64,
    pub k: f64,
}

impl ImportanceReport {
    /// Indices of kept filters, ascending.
    pub fn kept(&self) -> Vec<usize> {
        self.keep_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &keep)| keep.then_some(i))
            .collect()
    }

    pub fn kept_count(&self) -> usize {
        self.keep_mask.iter().filter(|&&k| k).count()
    }
}

/// Number of filters surviving percentile `k` out of `filters`:
/// `ceil((100 - k) / 100 * filters)`, at least 1.
pub fn kept_count(filters: usize, k: f64) -> usize {
    let exact = (100.0 - k) * filters as f64 / 100.0;
    ((exact - 1e-9).ceil() as usize).clamp(1, filters)
}

pub fn check_percentile(k: f64) -> Result<()> {
    if !(0.0..100.0).contains(&k) {
        return Err(Error::InvalidArgument(format!("percentile k = {k} must lie in [0, 100)")));
    }
    Ok(())
}

/// Keeps the highest-scoring filters above the `k`-th percentile. Equal
/// scores are ranked by lower filter index first.
pub fn select_filters(layer_index: usize, scores: &[f64], k: f64) -> Result<ImportanceReport> {
    check_percentile(k)?;
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no scores to select from".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("scores of layer {layer_index}"),
        });
    }
    let n = kept_count(scores.len(), k);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut keep_mask = vec![false; scores.len()];
    for &i in &order[..n] {
        keep_mask[i] = true;
    }
    Ok(ImportanceReport {
        layer_index,
        scores: scores.to_vec(),
        keep_mask,
        threshold: scores[order[n - 1]],
        k,
    })
}
