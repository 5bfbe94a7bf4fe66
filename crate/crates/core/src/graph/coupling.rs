//! Channel provenance, add-junction coupling and concat offsets.
//!
//! Every output channel of every node is traced back to the batch-norm
//! channel that gates it, or marked fixed when no prunable batch norm owns
//! it (graph input, convs without a following batch norm). Channels that
//! meet at an elementwise add must be kept or dropped together; they form
//! equivalence classes tracked by a union-find over (bn, channel) keys.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{infer_shapes_indexed, GraphModel, Op, Topology};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ChannelOrigin {
    /// Channel `channel` of the batch norm at node index `node`.
    Bn {
        node: usize,
        channel: usize,
    },
    Fixed,
}

/// Batch-norm layers whose masks must be identical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CouplingGroup {
    pub members: Vec<String>,
    /// Add nodes that join the members.
    pub junctions: Vec<String>,
}

/// Where one producer's channels land in a concat output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConcatSlice {
    pub producer: String,
    pub offset: usize,
    pub channels: usize,
}

#[derive(Debug, Clone)]
pub struct CouplingAnalysis {
    pub groups: Vec<CouplingGroup>,
    /// Concat node id → slices in argument order.
    pub concat_offsets: BTreeMap<String, Vec<ConcatSlice>>,
    /// Output channel provenance, indexed like `model.nodes`.
    pub origins: Vec<Vec<ChannelOrigin>>,
    /// Batch norms directly fed by a conv that feeds nothing else; only
    /// these can lose channels.
    pub prunable: Vec<usize>,
    classes: ChannelClasses,
}

impl CouplingAnalysis {
    /// Representative key of the class containing `origin`.
    pub fn class_of(&self, origin: ChannelOrigin) -> ChannelOrigin {
        self.classes.find_const(origin)
    }

    /// Members of every channel class, keyed by representative.
    pub fn channel_classes(&self) -> BTreeMap<ChannelOrigin, Vec<ChannelOrigin>> {
        self.classes.classes()
    }

    pub fn is_prunable(&self, node: usize) -> bool {
        self.prunable.binary_search(&node).is_ok()
    }
}

/// Union-find over channel keys; the `Fixed` key absorbs anything it meets.
#[derive(Debug, Clone, Default)]
struct ChannelClasses {
    parent: BTreeMap<ChannelOrigin, ChannelOrigin>,
}

impl ChannelClasses {
    fn find(&mut self, k: ChannelOrigin) -> ChannelOrigin {
        let p = *self.parent.entry(k).or_insert(k);
        if p == k {
            return k;
        }
        let r = self.find(p);
        self.parent.insert(k, r);
        r
    }

    fn find_const(&self, mut k: ChannelOrigin) -> ChannelOrigin {
        while let Some(&p) = self.parent.get(&k) {
            if p == k {
                break;
            }
            k = p;
        }
        k
    }

    fn union(&mut self, a: ChannelOrigin, b: ChannelOrigin) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        // Fixed sorts last, so the larger key wins and Fixed stays a root.
        let (root, child) = if ra > rb { (ra, rb) } else { (rb, ra) };
        self.parent.insert(child, root);
    }

    fn classes(&self) -> BTreeMap<ChannelOrigin, Vec<ChannelOrigin>> {
        let mut out: BTreeMap<ChannelOrigin, Vec<ChannelOrigin>> = BTreeMap::new();
        for &k in self.parent.keys() {
            out.entry(self.find_const(k)).or_default().push(k);
        }
        out
    }
}

fn exclusive_conv_feeding(model: &GraphModel, topo: &Topology, bn: usize) -> bool {
    match topo.inputs[bn].as_slice() {
        [p] => matches!(model.nodes[*p].op, Op::Conv(_)) && topo.consumers[*p] == [bn],
        _ => false,
    }
}

pub fn coupling_groups(model: &GraphModel) -> Result<CouplingAnalysis> {
    let topo = model.topology()?;
    let dims = infer_shapes_indexed(model)?;
    let n = model.nodes.len();

    let prunable: Vec<usize> = (0..n)
        .filter(|&i| matches!(model.nodes[i].op, Op::BatchNorm { .. }))
        .filter(|&i| exclusive_conv_feeding(model, &topo, i))
        .collect();

    let mut origins: Vec<Vec<ChannelOrigin>> = vec![Vec::new(); n];
    let mut classes = ChannelClasses::default();
    let mut junctions_by_pair: Vec<(usize, usize, usize)> = Vec::new();
    let mut concat_offsets = BTreeMap::new();

    for &i in &topo.order {
        let node = &model.nodes[i];
        let input_origins = |k: usize| -> Vec<ChannelOrigin> {
            match topo.inputs[i].get(k) {
                Some(&j) => origins[j].clone(),
                None => vec![ChannelOrigin::Fixed; model.input_shape[0]],
            }
        };
        let out = match &node.op {
            Op::Conv(a) => match topo.consumers[i].as_slice() {
                [bn] if prunable.binary_search(bn).is_ok() => (0..a.out_ch)
                    .map(|c| ChannelOrigin::Bn {
                        node: *bn,
                        channel: c,
                    })
                    .collect(),
                _ => vec![ChannelOrigin::Fixed; a.out_ch],
            },
            Op::BatchNorm { channels, .. } if prunable.binary_search(&i).is_ok() => (0..*channels)
                .map(|c| ChannelOrigin::Bn {
                    node: i,
                    channel: c,
                })
                .collect(),
            Op::Concat => {
                let mut out = Vec::new();
                let mut slices = Vec::new();
                for (k, &j) in topo.inputs[i].iter().enumerate() {
                    let o = input_origins(k);
                    slices.push(ConcatSlice {
                        producer: model.nodes[j].id.clone(),
                        offset: out.len(),
                        channels: o.len(),
                    });
                    out.extend(o);
                }
                concat_offsets.insert(node.id.clone(), slices);
                out
            }
            Op::Add => {
                let first = input_origins(0);
                for k in 1..topo.inputs[i].len() {
                    for (c, o) in input_origins(k).into_iter().enumerate() {
                        classes.union(first[c], o);
                        junctions_by_pair.push((i, c, k));
                    }
                }
                for &o in &first {
                    classes.find(o);
                }
                first
            }
            _ => input_origins(0),
        };
        debug_assert_eq!(out.len(), dims[i][0], "origin count for `{}`", node.id);
        for &o in &out {
            classes.find(o);
        }
        origins[i] = out;
    }

    // BN-level groups: members whose channels share a class.
    let mut bn_parent: BTreeMap<usize, usize> = prunable.iter().map(|&b| (b, b)).collect();
    fn root(p: &mut BTreeMap<usize, usize>, x: usize) -> usize {
        let px = p[&x];
        if px == x {
            return x;
        }
        let r = root(p, px);
        p.insert(x, r);
        r
    }
    let mut first_bn_of_class: BTreeMap<ChannelOrigin, usize> = BTreeMap::new();
    for (rep, members) in classes.classes() {
        for m in members {
            if let ChannelOrigin::Bn { node, .. } = m {
                match first_bn_of_class.get(&rep) {
                    None => {
                        first_bn_of_class.insert(rep, node);
                    }
                    Some(&other) => {
                        let (ra, rb) = (root(&mut bn_parent, other), root(&mut bn_parent, node));
                        if ra != rb {
                            bn_parent.insert(ra.max(rb), ra.min(rb));
                        }
                    }
                }
            }
        }
    }
    let mut grouped: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &b in &prunable {
        let r = root(&mut bn_parent, b);
        grouped.entry(r).or_default().insert(b);
    }
    let mut junctions: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &(add, c, _) in &junctions_by_pair {
        if let Some(ChannelOrigin::Bn { node, .. }) = origins[add].get(c).copied() {
            let r = root(&mut bn_parent, node);
            junctions.entry(r).or_default().insert(add);
        }
    }
    let groups = grouped
        .into_iter()
        .filter(|(_, members)| members.len() >= 2)
        .map(|(r, members)| CouplingGroup {
            members: members.iter().map(|&m| model.nodes[m].id.clone()).collect(),
            junctions: junctions
                .get(&r)
                .map(|s| s.iter().map(|&a| model.nodes[a].id.clone()).collect())
                .unwrap_or_default(),
        })
        .collect();

    Ok(CouplingAnalysis {
        groups,
        concat_offsets,
        origins,
        prunable,
        classes,
    })
}
