//! Structured filter pruning with direct weight transfer.
//!
//! Pruning happens in two steps. [`plan_prune`] turns per-layer keep masks
//! into kept index lists for every layer of the chain, following each conv
//! layer's surviving channels through pooling, activations, batchnorm and
//! flatten into the next parameterized layer. [`apply_prune`] then copies the
//! surviving weight slices into a new graph. Nothing is retrained and no
//! compensation term is added; every weight of the result is a bit-exact
//! copy of a weight in the source model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::inference::for_each_capture;
use crate::metrics::rpr;
use crate::model::{count_parameters, ActShape, BatchNorm, Conv2d, Dense, Layer, ModelGraph};
use crate::parallel::default_workers;
use crate::scoring::{check_percentile, score_layer, select_filters, ImportanceReport};

/// Which activation a filter is judged by.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapturePolicy {
    /// The conv output after any directly following batchnorm and ReLU.
    #[default]
    PostActivation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Percentile of significance in `[0, 100)`; larger prunes more.
    pub k: f64,
    pub workers: usize,
    /// Per-layer overrides of `k`, keyed by layer index.
    #[serde(default)]
    pub layer_k: BTreeMap<usize, f64>,
    #[serde(default)]
    pub capture_policy: CapturePolicy,
    /// Images per forward batch while capturing activations.
    pub batch_size: usize,
}

impl PruneConfig {
    pub fn new(k: f64) -> Self {
        Self {
            k,
            workers: default_workers(),
            layer_k: BTreeMap::new(),
            capture_policy: CapturePolicy::PostActivation,
            batch_size: 64,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn k_for(&self, layer_index: usize) -> f64 {
        self.layer_k.get(&layer_index).copied().unwrap_or(self.k)
    }

    pub fn validate(&self) -> Result<()> {
        check_percentile(self.k)?;
        for &k in self.layer_k.values() {
            check_percentile(k)?;
        }
        if self.workers == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("workers and batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Kept indices for one layer, in terms of the original model's channels
/// (spatial activations) or features (flat activations). Lists are sorted
/// ascending and never empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub layer_index: usize,
    pub kind: String,
    pub kept_inputs: Vec<usize>,
    pub kept_outputs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrunePlan {
    pub layers: Vec<LayerPlan>,
}

impl PrunePlan {
    /// Kept filters of each conv layer, keyed by layer index.
    pub fn conv_keeps(&self) -> BTreeMap<usize, Vec<usize>> {
        self.layers
            .iter()
            .filter(|l| l.kind == "conv2d")
            .map(|l| (l.layer_index, l.kept_outputs.clone()))
            .collect()
    }
}

/// Propagates per-conv kept filter lists through the chain.
fn derive_plan(g: &ModelGraph, conv_keep: &BTreeMap<usize, Vec<usize>>) -> Result<PrunePlan> {
    let shapes = g.infer_shapes()?;
    let mut current: Vec<usize> = (0..shapes[0].channels()).collect();
    let mut layers = Vec::with_capacity(g.layers().len());
    for (i, layer) in g.layers().iter().enumerate() {
        let inputs = current.clone();
        let outputs = match layer {
            Layer::Conv2d(c) => {
                let keep = conv_keep
                    .get(&i)
                    .ok_or_else(|| Error::Plan(format!("no kept-filter list for conv layer {i}")))?;
                if keep.is_empty() {
                    return Err(Error::Plan(format!("conv layer {i} would lose every filter")));
                }
                if keep.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Plan(format!("kept filters of layer {i} are not strictly ascending")));
                }
                if let Some(&bad) = keep.iter().find(|&&f| f >= c.filters()) {
                    return Err(Error::Plan(format!(
                        "layer {i} keeps filter {bad} but has only {}",
                        c.filters()
                    )));
                }
                keep.clone()
            }
            Layer::Flatten => match shapes[i] {
                ActShape::Spatial { h, w, c } => (0..h * w)
                    .flat_map(|p| inputs.iter().map(move |&ch| p * c + ch))
                    .collect(),
                ActShape::Flat(_) => inputs.clone(),
            },
            Layer::Dense(d) => (0..d.units()).collect(),
            Layer::MaxPool { .. } | Layer::Relu | Layer::Softmax | Layer::BatchNorm(_) => inputs.clone(),
        };
        layers.push(LayerPlan {
            layer_index: i,
            kind: layer.kind().to_string(),
            kept_inputs: inputs,
            kept_outputs: outputs.clone(),
        });
        current = outputs;
    }
    Ok(PrunePlan { layers })
}

/// Builds the prune plan from one importance report per conv layer.
pub fn plan_prune(g: &ModelGraph, reports: &[ImportanceReport]) -> Result<PrunePlan> {
    let convs = g.conv_indices();
    let mut keep = BTreeMap::new();
    for r in reports {
        let conv = g
            .layers()
            .get(r.layer_index)
            .and_then(Layer::as_conv)
            .ok_or_else(|| Error::Plan(format!("report for layer {} which is not a conv layer", r.layer_index)))?;
        if r.keep_mask.len() != conv.filters() {
            return Err(Error::Plan(format!(
                "report for layer {} has {} entries but the layer has {} filters",
                r.layer_index,
                r.keep_mask.len(),
                conv.filters()
            )));
        }
        if keep.insert(r.layer_index, r.kept()).is_some() {
            return Err(Error::Plan(format!("duplicate report for layer {}", r.layer_index)));
        }
    }
    if keep.len() != convs.len() {
        let missing: Vec<_> = convs.iter().filter(|c| !keep.contains_key(c)).collect();
        return Err(Error::Plan(format!("missing reports for conv layers {missing:?}")));
    }
    derive_plan(g, &keep)
}

/// Copies surviving weights into a new, smaller graph.
pub fn apply_prune(g: &ModelGraph, plan: &PrunePlan) -> Result<ModelGraph> {
    if plan.layers.len() != g.layers().len() {
        return Err(Error::Plan(format!(
            "plan covers {} layers, model has {}",
            plan.layers.len(),
            g.layers().len()
        )));
    }
    let expected = derive_plan(g, &plan.conv_keeps())?;
    if let Some((have, want)) = plan.layers.iter().zip(&expected.layers).find(|(a, b)| a != b) {
        return Err(Error::Plan(format!(
            "layer {} ({}) does not follow from the kept filters upstream (expected {} inputs / {} outputs)",
            have.layer_index,
            have.kind,
            want.kept_inputs.len(),
            want.kept_outputs.len()
        )));
    }
    let layers = g
        .layers()
        .iter()
        .zip(&plan.layers)
        .map(|(layer, lp)| -> Result<Layer> {
            Ok(match layer {
                Layer::Conv2d(c) => Layer::Conv2d(Conv2d {
                    kernel: c
                        .kernel
                        .gather_axis(2, &lp.kept_inputs)?
                        .gather_axis(3, &lp.kept_outputs)?,
                    bias: c.bias.gather_axis(0, &lp.kept_outputs)?,
                    stride: c.stride,
                    padding: c.padding,
                }),
                Layer::Dense(d) => Layer::Dense(Dense {
                    weights: d.weights.gather_axis(0, &lp.kept_inputs)?,
                    bias: d.bias.clone(),
                }),
                Layer::BatchNorm(b) => {
                    let ch = &lp.kept_inputs;
                    Layer::BatchNorm(BatchNorm {
                        gamma: b.gamma.gather_axis(0, ch)?,
                        beta: b.beta.gather_axis(0, ch)?,
                        mean: b.mean.gather_axis(0, ch)?,
                        var: b.var.gather_axis(0, ch)?,
                        eps: b.eps,
                    })
                }
                other => other.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let input_shape = g.input_shape();
    ModelGraph::new(g.name().to_string(), input_shape, layers)
}

/// Raw importance scores of every conv layer, in chain order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScores {
    pub layer_index: usize,
    pub scores: Vec<f64>,
}

/// Scores every conv layer of `g` on `d_var`, streaming one layer's
/// activations at a time.
pub fn score_model(g: &ModelGraph, d_var: &LabeledDataset, batch_size: usize, workers: usize) -> Result<Vec<LayerScores>> {
    let mut out = Vec::new();
    for_each_capture(g, d_var, batch_size, workers, |capture| {
        let scores = score_layer(&capture, workers)?;
        out.push(LayerScores {
            layer_index: capture.layer_index,
            scores,
        });
        Ok(())
    })?;
    Ok(out)
}

/// Applies the percentile selection of `cfg` to precomputed scores.
pub fn select_all(scores: &[LayerScores], cfg: &PruneConfig) -> Result<Vec<ImportanceReport>> {
    scores
        .iter()
        .map(|s| select_filters(s.layer_index, &s.scores, cfg.k_for(s.layer_index)))
        .collect()
}

/// Scores, selects, plans and applies in one call.
pub fn ocnna(g: &ModelGraph, d_var: &LabeledDataset, cfg: &PruneConfig) -> Result<(ModelGraph, Vec<ImportanceReport>)> {
    cfg.validate()?;
    let scores = score_model(g, d_var, cfg.batch_size, cfg.workers)?;
    let reports = select_all(&scores, cfg)?;
    let plan = plan_prune(g, &reports)?;
    Ok((apply_prune(g, &plan)?, reports))
}

/// Audit record written next to a pruned model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneManifest {
    pub k: f64,
    pub layers: Vec<ManifestLayer>,
    pub np_original: usize,
    pub np_pruned: usize,
    pub rpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestLayer {
    pub layer_index: usize,
    pub filters_before: usize,
    pub kept: Vec<usize>,
    pub scores: Vec<f64>,
    pub threshold: f64,
    pub k: f64,
}

impl PruneManifest {
    pub fn new(original: &ModelGraph, pruned: &ModelGraph, reports: &[ImportanceReport], k: f64) -> Result<Self> {
        let np_original = count_parameters(original);
        let np_pruned = count_parameters(pruned);
        Ok(Self {
            k,
            layers: reports
                .iter()
                .map(|r| ManifestLayer {
                    layer_index: r.layer_index,
                    filters_before: r.scores.len(),
                    kept: r.kept(),
                    scores: r.scores.clone(),
                    threshold: r.threshold,
                    k: r.k,
                })
                .collect(),
            np_original,
            np_pruned,
            rpr: rpr(np_original, np_pruned)?,
        })
    }
}
