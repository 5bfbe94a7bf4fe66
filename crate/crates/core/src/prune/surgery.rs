use super::ChannelMask;
use crate::error::{Error, Result};
use crate::graph::{coupling_groups, ChannelOrigin, CouplingAnalysis, GraphModel, NodeSpec, Op};
use crate::runtime::params::{BnParams, ConvAttrs, ConvParams, LayerTensors};

fn surgery_err(node: &str, channel: usize, reason: impl Into<String>) -> Error {
    Error::Surgery {
        node: node.to_string(),
        channel,
        reason: reason.into(),
    }
}

/// Remove masked channels: batch-norm entries, the producing conv's
/// filters, and the matching input slices of every downstream conv (through
/// concat offsets and channel-preserving ops). Returns a new graph.
pub fn apply_masks(model: &GraphModel, mask: &ChannelMask) -> Result<GraphModel> {
    let analysis = coupling_groups(model)?;
    apply_masks_with(model, &analysis, mask)
}

pub(super) fn apply_masks_with(
    model: &GraphModel,
    analysis: &CouplingAnalysis,
    mask: &ChannelMask,
) -> Result<GraphModel> {
    let topo = model.topology()?;
    for (id, keep) in &mask.keep {
        let i = *topo
            .index
            .get(id)
            .ok_or_else(|| surgery_err(id, 0, "mask names an unknown node"))?;
        let channels = match model.nodes[i].op {
            Op::BatchNorm { channels, .. } => channels,
            _ => {
                return Err(surgery_err(
                    id,
                    0,
                    "mask names a node that is not a batch norm",
                ))
            }
        };
        if keep.len() != channels {
            return Err(surgery_err(
                id,
                keep.len().min(channels),
                format!("mask has {} entries for {channels} channels", keep.len()),
            ));
        }
        if !analysis.is_prunable(i) {
            if let Some(c) = keep.iter().position(|k| !k) {
                return Err(surgery_err(id, c, "layer is not fed by an exclusive conv"));
            }
        }
        if !keep.iter().any(|k| *k) {
            return Err(surgery_err(id, 0, "mask removes every channel"));
        }
    }
    let keeps = |o: ChannelOrigin| -> bool {
        match o {
            ChannelOrigin::Fixed => true,
            ChannelOrigin::Bn { node, channel } => mask
                .keep
                .get(&model.nodes[node].id)
                .map(|k| k[channel])
                .unwrap_or(true),
        }
    };
    for (rep, members) in analysis.channel_classes() {
        let expected = keeps(rep);
        for m in members {
            if keeps(m) != expected {
                let (node, channel) = match m {
                    ChannelOrigin::Bn { node, channel } => (model.nodes[node].id.as_str(), channel),
                    ChannelOrigin::Fixed => ("<fixed>", 0),
                };
                return Err(surgery_err(
                    node,
                    channel,
                    "mask disagrees with its add-coupled channels",
                ));
            }
        }
    }

    let n = model.nodes.len();
    let mut kept: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &i in &topo.order {
        let node = &model.nodes[i];
        kept[i] = match &node.op {
            Op::Concat => {
                let slices = &analysis.concat_offsets[&node.id];
                let mut out = Vec::new();
                for (slice, &j) in slices.iter().zip(&topo.inputs[i]) {
                    out.extend(kept[j].iter().map(|c| slice.offset + c));
                }
                out
            }
            _ => (0..analysis.origins[i].len())
                .filter(|&c| keeps(analysis.origins[i][c]))
                .collect(),
        };
        match &node.op {
            Op::Add => {
                for &j in &topo.inputs[i] {
                    if kept[j] != kept[i] {
                        return Err(surgery_err(
                            &node.id,
                            0,
                            "add operands keep different channels",
                        ));
                    }
                }
            }
            Op::DetectHead { .. } => {
                if kept[i].len() != analysis.origins[i].len() {
                    let c = (0..analysis.origins[i].len())
                        .find(|c| !kept[i].contains(c))
                        .unwrap_or(0);
                    return Err(surgery_err(
                        &node.id,
                        c,
                        "detect head channels cannot be pruned",
                    ));
                }
            }
            _ => {}
        }
    }

    let nodes = model
        .nodes
        .iter()
        .enumerate()
        .map(|(i, node)| {
            let (op, params) = match (&node.op, &node.params) {
                (Op::Conv(a), Some(LayerTensors::Conv(p))) => {
                    let in_keep: Vec<usize> = match topo.inputs[i].first() {
                        Some(&j) => kept[j].clone(),
                        None => (0..a.in_ch).collect(),
                    };
                    let out_keep = &kept[i];
                    let k = a.kh * a.kw;
                    let mut weight = Vec::with_capacity(out_keep.len() * in_keep.len() * k);
                    for &o in out_keep {
                        for &c in &in_keep {
                            let start = (o * a.in_ch + c) * k;
                            weight.extend_from_slice(&p.weight[start..start + k]);
                        }
                    }
                    let bias = p
                        .bias
                        .as_ref()
                        .map(|b| out_keep.iter().map(|&o| b[o]).collect());
                    (
                        Op::Conv(ConvAttrs {
                            in_ch: in_keep.len(),
                            out_ch: out_keep.len(),
                            ..*a
                        }),
                        Some(LayerTensors::Conv(ConvParams { weight, bias })),
                    )
                }
                (Op::BatchNorm { eps, .. }, Some(LayerTensors::BatchNorm(p))) => {
                    let pick = |v: &[f64]| kept[i].iter().map(|&c| v[c]).collect::<Vec<_>>();
                    (
                        Op::BatchNorm {
                            channels: kept[i].len(),
                            eps: *eps,
                        },
                        Some(LayerTensors::BatchNorm(BnParams {
                            gamma: pick(&p.gamma),
                            beta: pick(&p.beta),
                            running_mean: pick(&p.running_mean),
                            running_var: pick(&p.running_var),
                        })),
                    )
                }
                (op, params) => (op.clone(), params.clone()),
            };
            NodeSpec {
                id: node.id.clone(),
                op,
                inputs: node.inputs.clone(),
                params,
            }
        })
        .collect();
    let pruned = GraphModel {
        name: model.name.clone(),
        input_shape: model.input_shape,
        classes: model.classes.clone(),
        nodes,
        outputs: model.outputs.clone(),
    };
    pruned.validate().map_err(|e| {
        surgery_err(
            &model.name,
            0,
            format!("pruned graph fails validation: {e}"),
        )
    })?;
    Ok(pruned)
}
