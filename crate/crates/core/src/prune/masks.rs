use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::threshold::layer_values;
use super::PruneConfig;
use crate::error::Result;
use crate::graph::{coupling_groups, ChannelOrigin, CouplingAnalysis, GraphModel};

/// Keep-vector per prunable batch-norm layer, keyed by node id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelMask {
    pub keep: BTreeMap<String, Vec<bool>>,
}

impl ChannelMask {
    /// Keep every channel of every prunable layer.
    pub fn all_keep(model: &GraphModel) -> Result<Self> {
        let analysis = coupling_groups(model)?;
        Ok(Self::all_keep_with(model, &analysis))
    }

    pub(crate) fn all_keep_with(model: &GraphModel, analysis: &CouplingAnalysis) -> Self {
        let keep = analysis
            .prunable
            .iter()
            .map(|&i| {
                let n = analysis.origins[i].len();
                (model.nodes[i].id.clone(), vec![true; n])
            })
            .collect();
        ChannelMask { keep }
    }

    pub fn kept(&self, id: &str) -> Option<usize> {
        self.keep.get(id).map(|k| k.iter().filter(|b| **b).count())
    }

    pub fn total_kept(&self) -> usize {
        self.keep.values().flatten().filter(|b| **b).count()
    }
}

/// Drop channels whose ranking value is strictly below
/// `min(threshold, guard)`, union keep-sets across add-coupled channels, then
/// restore the strongest channels of any layer left under
/// `min_channels_per_layer`.
pub fn build_masks(
    model: &GraphModel,
    threshold: f64,
    guard: f64,
    cfg: &PruneConfig,
) -> Result<ChannelMask> {
    let analysis = coupling_groups(model)?;
    build_masks_with(model, &analysis, threshold, guard, cfg)
}

pub(super) fn build_masks_with(
    model: &GraphModel,
    analysis: &CouplingAnalysis,
    threshold: f64,
    guard: f64,
    cfg: &PruneConfig,
) -> Result<ChannelMask> {
    cfg.validate()?;
    let cut = threshold.min(guard);
    let values: BTreeMap<String, Vec<f64>> = layer_values(model, cfg)?.into_iter().collect();
    let index_of: BTreeMap<&str, usize> = analysis
        .prunable
        .iter()
        .map(|&i| (model.nodes[i].id.as_str(), i))
        .collect();

    let mut keep: BTreeMap<String, Vec<bool>> = values
        .iter()
        .map(|(id, v)| (id.clone(), v.iter().map(|g| !(*g < cut)).collect()))
        .collect();

    let classes = analysis.channel_classes();
    let key_of = |o: &ChannelOrigin| -> Option<(String, usize)> {
        match o {
            ChannelOrigin::Bn { node, channel } => Some((model.nodes[*node].id.clone(), *channel)),
            ChannelOrigin::Fixed => None,
        }
    };
    // Union within classes; fixed-coupled classes are always kept.
    let unify = |keep: &mut BTreeMap<String, Vec<bool>>| {
        for (rep, members) in &classes {
            let any = *rep == ChannelOrigin::Fixed
                || members
                    .iter()
                    .filter_map(key_of)
                    .any(|(id, c)| keep.get(&id).map(|k| k[c]).unwrap_or(true));
            if any {
                for (id, c) in members.iter().filter_map(key_of) {
                    if let Some(k) = keep.get_mut(&id) {
                        k[c] = true;
                    }
                }
            }
        }
    };
    unify(&mut keep);

    loop {
        let mut changed = false;
        for (id, vals) in &values {
            let k = keep.get_mut(id).expect("same key set");
            let kept = k.iter().filter(|b| **b).count();
            let want = cfg.min_channels_per_layer.min(k.len());
            if kept >= want {
                continue;
            }
            let mut order: Vec<usize> = (0..vals.len()).filter(|c| !k[*c]).collect();
            order.sort_by(|a, b| vals[*b].total_cmp(&vals[*a]).then(a.cmp(b)));
            for c in order.into_iter().take(want - kept) {
                k[c] = true;
            }
            changed = true;
        }
        if !changed {
            break;
        }
        unify(&mut keep);
    }
    debug_assert!(keep.keys().all(|k| index_of.contains_key(k.as_str())));
    Ok(ChannelMask { keep })
}
