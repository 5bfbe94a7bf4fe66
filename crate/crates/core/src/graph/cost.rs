//! Parameter, FLOP and size accounting.
//!
//! A multiply-add counts as two FLOPs. Batch norm costs a multiply and an
//! add per element, activations one op per element, max pooling one
//! comparison per window element, and an n-way add n−1 ops per element.
//! Concat, upsample and detect heads are free.

use serde::Serialize;

use super::{infer_shapes_indexed, GraphModel, Op};
use crate::error::Result;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NodeCost {
    pub id: String,
    pub kind: String,
    /// Gradient-trained parameters (conv weights/bias, BN γ/β).
    pub params_trainable: u64,
    /// Trainable parameters plus BN running statistics.
    pub params_total: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub input_shape: [usize; 3],
    pub nodes: Vec<NodeCost>,
    pub params_trainable: u64,
    pub params_total: u64,
    pub flops: u64,
    pub model_size_bytes: u64,
}

impl CostReport {
    pub fn gflops(&self) -> f64 {
        self.flops as f64 / 1e9
    }
    pub fn params_millions(&self) -> f64 {
        self.params_trainable as f64 / 1e6
    }
    pub fn model_size_mb(&self) -> f64 {
        self.model_size_bytes as f64 / (1024.0 * 1024.0)
    }
}

fn node_params(op: &Op) -> (u64, u64) {
    match op {
        Op::Conv(a) => {
            let n = (a.weight_len() + if a.bias { a.out_ch } else { 0 }) as u64;
            (n, n)
        }
        Op::BatchNorm { channels, .. } => (2 * *channels as u64, 4 * *channels as u64),
        _ => (0, 0),
    }
}

/// Per-node parameter counts (FLOP fields left at zero).
pub fn count_params(model: &GraphModel) -> CostReport {
    let nodes: Vec<NodeCost> = model
        .nodes
        .iter()
        .map(|n| {
            let (t, all) = node_params(&n.op);
            NodeCost {
                id: n.id.clone(),
                kind: n.op.kind().into(),
                params_trainable: t,
                params_total: all,
                flops: 0,
            }
        })
        .collect();
    CostReport {
        input_shape: model.input_shape,
        params_trainable: nodes.iter().map(|n| n.params_trainable).sum(),
        params_total: nodes.iter().map(|n| n.params_total).sum(),
        nodes,
        ..Default::default()
    }
}

/// Per-node FLOPs for one sample of shape `input_shape`.
pub fn count_flops(model: &GraphModel, input_shape: [usize; 3]) -> Result<CostReport> {
    let mut at_shape = model.clone();
    at_shape.input_shape = input_shape;
    let dims = infer_shapes_indexed(&at_shape)?;
    let mut report = count_params(model);
    report.input_shape = input_shape;
    for ((n, d), cost) in model.nodes.iter().zip(&dims).zip(report.nodes.iter_mut()) {
        let elems = (d[0] * d[1] * d[2]) as u64;
        cost.flops = match &n.op {
            Op::Conv(a) => 2 * (a.out_ch * a.in_ch * a.kh * a.kw * d[1] * d[2]) as u64,
            Op::BatchNorm { .. } => 2 * elems,
            Op::Silu | Op::Relu => elems,
            Op::MaxPool(p) => elems * (p.kernel * p.kernel) as u64,
            Op::Add => elems * (n.inputs.len().saturating_sub(1)) as u64,
            Op::Concat | Op::UpsampleNearest2 | Op::DetectHead { .. } => 0,
        };
    }
    report.flops = report.nodes.iter().map(|n| n.flops).sum();
    Ok(report)
}

pub fn model_size_bytes(model: &GraphModel) -> Result<u64> {
    Ok(super::io::to_bytes(model)?.len() as u64)
}

/// Parameters, FLOPs at the model's own input shape, and serialized size.
pub fn full_report(model: &GraphModel) -> Result<CostReport> {
    let mut r = count_flops(model, model.input_shape)?;
    r.model_size_bytes = model_size_bytes(model)?;
    Ok(r)
}
