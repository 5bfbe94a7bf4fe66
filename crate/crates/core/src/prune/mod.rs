//! Batch-norm channel pruning: sparse training, sorted-γ thresholding,
//! mask construction, graph surgery and fine-tuning.

mod masks;
mod surgery;
mod threshold;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{cost, coupling_groups, GraphModel};

pub use masks::{build_masks, ChannelMask};
pub use surgery::apply_masks;
pub use threshold::{
    collect_sorted_gammas, largest_value_below, max_threshold_guard, pruning_threshold, SortedGamma,
};
pub use train::{
    apply_l1_subgradient, fine_tune, gamma_l1, median_abs_gamma, sparse_train, train_loop,
    EpochStats, FineTuneOutcome, TrainOutcome, TrainTask,
};

/// Sparse-training / fine-tuning hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct SparseConfig {
    /// L1 penalty factor on batch-norm γ; 0 gives plain training.
    pub lambda: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SparseConfig {
    fn default() -> Self {
        SparseConfig {
            lambda: 1e-2,
            epochs: 60,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl SparseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    /// Fraction of the sorted γ list below the threshold index, in [0,1).
    pub rate: f64,
    pub min_channels_per_layer: usize,
    /// Rank channels by |γ| (default) rather than signed γ.
    pub use_absolute_gamma: bool,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            rate: 0.2,
            min_channels_per_layer: 1,
            use_absolute_gamma: true,
        }
    }
}

impl PruneConfig {
    pub fn with_rate(rate: f64) -> Self {
        PruneConfig {
            rate,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::Config(format!(
                "pruning rate must lie in [0,1), got {}",
                self.rate
            )));
        }
        if self.min_channels_per_layer == 0 {
            return Err(Error::Config("min_channels_per_layer must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub id: String,
    pub kept: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub rate: f64,
    pub gamma_count: usize,
    pub threshold_index: usize,
    pub pruning_threshold: f64,
    pub guard: f64,
    /// `min(pruning_threshold, guard)`; channels strictly below it are dropped.
    pub effective_threshold: f64,
    pub guard_clamped: bool,
    pub channels_before: usize,
    pub channels_after: usize,
    pub layers: Vec<LayerReport>,
    pub params_before: u64,
    pub params_after: u64,
    pub flops_before: u64,
    pub flops_after: u64,
    pub size_before: u64,
    pub size_after: u64,
}

/// Collect → guard → threshold → masks → surgery. The input is untouched.
pub fn prune(model: &GraphModel, cfg: &PruneConfig) -> Result<(GraphModel, PruneReport)> {
    cfg.validate()?;
    let analysis = coupling_groups(model)?;
    let sorted = collect_sorted_gammas(model, cfg)?;
    let guard = max_threshold_guard(model, cfg)?;
    let values: Vec<f64> = sorted.iter().map(|g| g.value).collect();
    let (threshold_index, threshold) = pruning_threshold(&values, cfg.rate)?;
    let mask = masks::build_masks_with(model, &analysis, threshold, guard, cfg)?;
    let pruned = surgery::apply_masks_with(model, &analysis, &mask)?;

    let before = cost::full_report(model)?;
    let after = cost::full_report(&pruned)?;
    let layers: Vec<LayerReport> = mask
        .keep
        .iter()
        .map(|(id, keep)| LayerReport {
            id: id.clone(),
            kept: keep.iter().filter(|k| **k).count(),
            total: keep.len(),
        })
        .collect();
    let report = PruneReport {
        rate: cfg.rate,
        gamma_count: values.len(),
        threshold_index,
        pruning_threshold: threshold,
        guard,
        effective_threshold: threshold.min(guard),
        guard_clamped: guard < threshold,
        channels_before: layers.iter().map(|l| l.total).sum(),
        channels_after: layers.iter().map(|l| l.kept).sum(),
        layers,
        params_before: before.params_trainable,
        params_after: after.params_trainable,
        flops_before: before.flops,
        flops_after: after.flops,
        size_before: before.model_size_bytes,
        size_after: after.model_size_bytes,
    };
    Ok((pruned, report))
}
