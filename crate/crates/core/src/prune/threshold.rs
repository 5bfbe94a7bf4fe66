use serde::Serialize;

use super::PruneConfig;
use crate::error::{Error, Result};
use crate::graph::{coupling_groups, GraphModel};
use crate::runtime::params::LayerTensors;

/// One batch-norm channel's ranking value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SortedGamma {
    pub value: f64,
    pub node: String,
    pub channel: usize,
}

fn rank_value(g: f64, cfg: &PruneConfig) -> f64 {
    if cfg.use_absolute_gamma {
        g.abs()
    } else {
        g
    }
}

/// Ranking values of every prunable batch-norm layer, by layer id.
pub(super) fn layer_values(
    model: &GraphModel,
    cfg: &PruneConfig,
) -> Result<Vec<(String, Vec<f64>)>> {
    let analysis = coupling_groups(model)?;
    if analysis.prunable.is_empty() {
        return Err(Error::Unprunable);
    }
    Ok(analysis
        .prunable
        .iter()
        .map(|&i| {
            let node = &model.nodes[i];
            let Some(LayerTensors::BatchNorm(p)) = &node.params else {
                unreachable!("prunable nodes are batch norms")
            };
            (
                node.id.clone(),
                p.gamma.iter().map(|g| rank_value(*g, cfg)).collect(),
            )
        })
        .collect())
}

/// Ascending by value, ties by (node id, channel).
pub fn collect_sorted_gammas(model: &GraphModel, cfg: &PruneConfig) -> Result<Vec<SortedGamma>> {
    let mut out: Vec<SortedGamma> = layer_values(model, cfg)?
        .into_iter()
        .flat_map(|(id, vals)| {
            vals.into_iter().enumerate().map(move |(c, v)| SortedGamma {
                value: v,
                node: id.clone(),
                channel: c,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        a.value
            .total_cmp(&b.value)
            .then_with(|| a.node.cmp(&b.node))
            .then_with(|| a.channel.cmp(&b.channel))
    });
    Ok(out)
}

/// Minimum over layers of each layer's largest ranking value. Thresholds are
/// clamped to it so every layer keeps its strongest channel.
pub fn max_threshold_guard(model: &GraphModel, cfg: &PruneConfig) -> Result<f64> {
    Ok(layer_values(model, cfg)?
        .iter()
        .map(|(_, v)| v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .fold(f64::INFINITY, f64::min))
}

/// `index = floor(len · rate)` clamped to `len − 1`; threshold is the
/// value at that index.
pub fn pruning_threshold(sorted: &[f64], rate: f64) -> Result<(usize, f64)> {
    if sorted.is_empty() {
        return Err(Error::Input("cannot threshold an empty gamma list".into()));
    }
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "pruning rate must lie in [0,1), got {rate}"
        )));
    }
    let index = ((sorted.len() as f64 * rate).floor() as usize).min(sorted.len() - 1);
    Ok((index, sorted[index]))
}

/// Largest value strictly below `bound`, i.e. the biggest γ a clamped
/// threshold still removes.
pub fn largest_value_below(sorted: &[f64], bound: f64) -> Option<f64> {
    let n = sorted.partition_point(|v| *v < bound);
    n.checked_sub(1).map(|i| sorted[i])
}
