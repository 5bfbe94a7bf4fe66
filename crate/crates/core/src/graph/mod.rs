//! Detector graph model: node specs, validation and topology.

pub mod cost;
pub mod coupling;
pub mod fixtures;
pub mod io;
pub mod shapes;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::runtime::params::{ConvAttrs, LayerTensors, PoolAttrs};

pub use cost::{count_flops, count_params, model_size_bytes, CostReport, NodeCost};
pub use coupling::{coupling_groups, ChannelOrigin, ConcatSlice, CouplingAnalysis, CouplingGroup};
pub use io::{load_graph, save_graph, GRAPH_FORMAT};
pub use shapes::{infer_shapes, infer_shapes_indexed};

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Conv(ConvAttrs),
    BatchNorm {
        channels: usize,
        eps: f64,
    },
    Silu,
    Relu,
    MaxPool(PoolAttrs),
    UpsampleNearest2,
    Concat,
    Add,
    /// Passes raw head output through; `classes` and `boxes_per_cell`
    /// fix the expected channel layout.
    DetectHead {
        classes: usize,
        boxes_per_cell: usize,
    },
}

impl Op {
    /// Serialized kind name.
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Conv(_) => "conv",
            Op::BatchNorm { .. } => "batchnorm",
            Op::Silu => "silu",
            Op::Relu => "relu",
            Op::MaxPool(_) => "maxpool2",
            Op::UpsampleNearest2 => "upsample_nearest2",
            Op::Concat => "concat",
            Op::Add => "add",
            Op::DetectHead { .. } => "detect_head",
        }
    }

    pub fn is_junction(&self) -> bool {
        matches!(self, Op::Concat | Op::Add)
    }

    /// Ops whose output channel `c` depends only on input channel `c`.
    pub fn preserves_channels(&self) -> bool {
        matches!(
            self,
            Op::BatchNorm { .. }
                | Op::Silu
                | Op::Relu
                | Op::MaxPool(_)
                | Op::UpsampleNearest2
                | Op::DetectHead { .. }
        )
    }
}

/// Channels emitted per cell by a detect head.
pub fn head_channels(classes: usize, boxes_per_cell: usize) -> usize {
    boxes_per_cell * (5 + classes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: String,
    pub op: Op,
    /// Producer ids in argument order. Empty means the node reads the
    /// graph input.
    pub inputs: Vec<String>,
    pub params: Option<LayerTensors>,
}

impl NodeSpec {
    pub fn new(id: impl Into<String>, op: Op, inputs: &[&str]) -> Self {
        NodeSpec {
            id: id.into(),
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            params: None,
        }
    }

    pub fn with_params(mut self, params: LayerTensors) -> Self {
        self.params = Some(params);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphModel {
    pub name: String,
    /// (channels, height, width) of one input sample.
    pub input_shape: [usize; 3],
    pub classes: Vec<String>,
    pub nodes: Vec<NodeSpec>,
    pub outputs: Vec<String>,
}

/// Index structure derived from a validated graph.
#[derive(Debug, Clone)]
pub struct Topology {
    /// Node indices in a dependency-respecting order; ties keep list order.
    pub order: Vec<usize>,
    pub inputs: Vec<Vec<usize>>,
    pub consumers: Vec<Vec<usize>>,
    pub outputs: Vec<usize>,
    pub source: usize,
    pub index: HashMap<String, usize>,
}

impl GraphModel {
    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut NodeSpec> {
        self.nodes.iter_mut().find(|n| n.id == id)
    }

    /// Structural validation: ids, arity, parameter presence, acyclicity and
    /// the single-source rule. Shape consistency is checked by
    /// [`infer_shapes`].
    pub fn topology(&self) -> Result<Topology> {
        let mut index = HashMap::with_capacity(self.nodes.len());
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id.is_empty() {
                return Err(Error::Validation(format!("node #{i} has an empty id")));
            }
            if index.insert(n.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate node id `{}`", n.id)));
            }
        }
        let mut inputs = Vec::with_capacity(self.nodes.len());
        let mut consumers = vec![Vec::new(); self.nodes.len()];
        let mut sources = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            check_node(n)?;
            let mut ins = Vec::with_capacity(n.inputs.len());
            for src in &n.inputs {
                let j = *index.get(src).ok_or_else(|| {
                    Error::Validation(format!("node `{}` reads unknown node `{src}`", n.id))
                })?;
                ins.push(j);
                consumers[j].push(i);
            }
            if ins.is_empty() {
                sources.push(i);
            }
            inputs.push(ins);
        }
        if sources.len() != 1 {
            return Err(Error::Validation(format!(
                "exactly one node must read the graph input, found {}",
                sources.len()
            )));
        }
        // Kahn's algorithm, always taking the lowest-listed ready node.
        let mut pending: Vec<usize> = inputs.iter().map(Vec::len).collect();
        let mut ready = std::collections::BTreeSet::new();
        ready.insert(sources[0]);
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(&i) = ready.iter().next() {
            ready.remove(&i);
            order.push(i);
            for &c in &consumers[i] {
                pending[c] -= 1;
                if pending[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != self.nodes.len() {
            let stuck: Vec<&str> = (0..self.nodes.len())
                .filter(|i| pending[*i] > 0)
                .map(|i| self.nodes[i].id.as_str())
                .collect();
            return Err(Error::Validation(format!(
                "graph has a cycle through {stuck:?}"
            )));
        }
        if self.outputs.is_empty() {
            return Err(Error::Validation("graph declares no outputs".into()));
        }
        let outputs = self
            .outputs
            .iter()
            .map(|o| {
                index
                    .get(o)
                    .copied()
                    .ok_or_else(|| Error::Validation(format!("unknown output node `{o}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Topology {
            order,
            inputs,
            consumers,
            outputs,
            source: sources[0],
            index,
        })
    }

    /// Full validation: structure plus shape inference.
    pub fn validate(&self) -> Result<Topology> {
        let topo = self.topology()?;
        shapes::infer_with(self, &topo)?;
        Ok(topo)
    }

    /// Batch-norm node indices in list order.
    pub fn batchnorm_nodes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::BatchNorm { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn detect_heads(&self) -> Vec<&NodeSpec> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::DetectHead { .. }))
            .collect()
    }
}

fn check_node(n: &NodeSpec) -> Result<()> {
    let arity_ok = match n.op {
        Op::Concat | Op::Add => n.inputs.len() >= 2,
        _ => n.inputs.len() <= 1,
    };
    if !arity_ok {
        return Err(Error::Validation(format!(
            "node `{}` ({}) has {} inputs",
            n.id,
            n.op.kind(),
            n.inputs.len()
        )));
    }
    match (&n.op, &n.params) {
        (Op::Conv(a), Some(LayerTensors::Conv(p))) => {
            if a.kh == 0 || a.kw == 0 || a.stride == 0 || a.in_ch == 0 || a.out_ch == 0 {
                return Err(Error::Validation(format!(
                    "conv `{}` has a zero dimension",
                    n.id
                )));
            }
            if p.weight.len() != a.weight_len() {
                return Err(Error::Validation(format!(
                    "conv `{}` weight has {} values, expected {}",
                    n.id,
                    p.weight.len(),
                    a.weight_len()
                )));
            }
            match (&p.bias, a.bias) {
                (Some(b), true) if b.len() == a.out_ch => {}
                (None, false) => {}
                _ => {
                    return Err(Error::Validation(format!(
                        "conv `{}` bias does not match its attributes",
                        n.id
                    )))
                }
            }
        }
        (Op::BatchNorm { channels, eps }, Some(LayerTensors::BatchNorm(p))) => {
            if !(*eps > 0.0) {
                return Err(Error::Validation(format!(
                    "batchnorm `{}` needs eps > 0",
                    n.id
                )));
            }
            if p.channels() != *channels || !p.is_consistent() {
                return Err(Error::Validation(format!(
                    "batchnorm `{}` parameters do not match {channels} channels",
                    n.id
                )));
            }
        }
        (Op::Conv(_), _) | (Op::BatchNorm { .. }, _) => {
            return Err(Error::Validation(format!(
                "node `{}` ({}) is missing its parameters",
                n.id,
                n.op.kind()
            )))
        }
        (_, Some(_)) => {
            return Err(Error::Validation(format!(
                "node `{}` ({}) does not take parameters",
                n.id,
                n.op.kind()
            )))
        }
        (Op::MaxPool(p), None) => {
            if p.kernel == 0 || p.stride == 0 {
                return Err(Error::Validation(format!(
                    "pool `{}` has a zero window",
                    n.id
                )));
            }
        }
        (Op::DetectHead { boxes_per_cell, .. }, None) => {
            if *boxes_per_cell == 0 {
                return Err(Error::Validation(format!(
                    "detect head `{}` needs boxes",
                    n.id
                )));
            }
        }
        _ => {}
    }
    Ok(())
}
