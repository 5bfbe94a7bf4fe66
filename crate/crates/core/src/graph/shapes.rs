//! Static shape inference.

use std::collections::HashMap;

use super::{head_channels, GraphModel, Op, Topology};
use crate::error::{Error, Result};

/// Output (channels, height, width) of every node, keyed by id.
pub fn infer_shapes(model: &GraphModel) -> Result<HashMap<String, [usize; 3]>> {
    let dims = infer_shapes_indexed(model)?;
    Ok(model
        .nodes
        .iter()
        .zip(dims)
        .map(|(n, d)| (n.id.clone(), d))
        .collect())
}

/// Output dims indexed like `model.nodes`.
pub fn infer_shapes_indexed(model: &GraphModel) -> Result<Vec<[usize; 3]>> {
    let topo = model.topology()?;
    infer_with(model, &topo)
}

pub(crate) fn infer_with(model: &GraphModel, topo: &Topology) -> Result<Vec<[usize; 3]>> {
    let mut dims: Vec<Option<[usize; 3]>> = vec![None; model.nodes.len()];
    for &i in &topo.order {
        let node = &model.nodes[i];
        let ins: Vec<[usize; 3]> = if topo.inputs[i].is_empty() {
            vec![model.input_shape]
        } else {
            topo.inputs[i]
                .iter()
                .map(|&j| dims[j].expect("topological order"))
                .collect()
        };
        let [c, h, w] = ins[0];
        let out = match &node.op {
            Op::Conv(a) => {
                if c != a.in_ch {
                    return Err(Error::shape(
                        &node.id,
                        format!(
                            "conv expects {} input channels, producer gives {c}",
                            a.in_ch
                        ),
                    ));
                }
                let (ho, wo) = a.output_hw(h, w).ok_or_else(|| {
                    Error::shape(&node.id, format!("kernel does not fit {h}x{w} input"))
                })?;
                [a.out_ch, ho, wo]
            }
            Op::BatchNorm { channels, .. } => {
                if c != *channels {
                    return Err(Error::shape(
                        &node.id,
                        format!("batchnorm has {channels} channels, producer gives {c}"),
                    ));
                }
                [c, h, w]
            }
            Op::Silu | Op::Relu => [c, h, w],
            Op::MaxPool(p) => {
                let (ho, wo) = p.output_hw(h, w).ok_or_else(|| {
                    Error::shape(&node.id, format!("pool window does not fit {h}x{w} input"))
                })?;
                [c, ho, wo]
            }
            Op::UpsampleNearest2 => [c, 2 * h, 2 * w],
            Op::Concat => {
                let mut total = 0;
                for d in &ins {
                    if d[1] != h || d[2] != w {
                        return Err(Error::shape(
                            &node.id,
                            format!("concat inputs disagree spatially: {:?} vs {:?}", d, ins[0]),
                        ));
                    }
                    total += d[0];
                }
                [total, h, w]
            }
            Op::Add => {
                for d in &ins {
                    if *d != ins[0] {
                        return Err(Error::shape(
                            &node.id,
                            format!("add operands {:?} and {:?} differ", ins[0], d),
                        ));
                    }
                }
                ins[0]
            }
            Op::DetectHead {
                classes,
                boxes_per_cell,
            } => {
                let want = head_channels(*classes, *boxes_per_cell);
                if c != want {
                    return Err(Error::shape(
                        &node.id,
                        format!("detect head expects {want} channels, producer gives {c}"),
                    ));
                }
                [c, h, w]
            }
        };
        dims[i] = Some(out);
    }
    Ok(dims
        .into_iter()
        .map(|d| d.expect("all nodes visited"))
        .collect())
}
