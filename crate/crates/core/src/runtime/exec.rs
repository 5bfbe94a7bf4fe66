//! Graph execution with one recorded forward pass per backward pass.

use crate::error::{Error, Result};
use crate::graph::{GraphModel, Op, Topology};
use crate::runtime::kernels::{self, BnCache, Mode};
use crate::runtime::params::{LayerGrads, LayerTensors};
use crate::tensor::Tensor4;

enum NodeCache {
    None,
    Bn(BnCache),
    Pool(Vec<usize>),
}

struct ForwardPass {
    node_count: usize,
    topo: Topology,
    input: Tensor4,
    values: Vec<Tensor4>,
    caches: Vec<NodeCache>,
}

impl ForwardPass {
    fn input_of(&self, node: usize, k: usize) -> &Tensor4 {
        match self.topo.inputs[node].get(k) {
            Some(&j) => &self.values[j],
            None => &self.input,
        }
    }
}

/// Gradients of a scalar objective with respect to every trainable
/// parameter, indexed like `model.nodes`, plus the graph input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Option<LayerGrads>>,
    pub input: Tensor4,
}

impl Gradients {
    pub fn zeros_like(model: &GraphModel, input_dims: [usize; 4]) -> Self {
        Gradients {
            layers: model
                .nodes
                .iter()
                .map(|n| n.params.as_ref().map(LayerGrads::zeros_like))
                .collect(),
            input: Tensor4::zeros(input_dims),
        }
    }
}

/// Forward for parameter-free ops.
pub fn layer_forward(op: &Op, inputs: &[&Tensor4], node: &str) -> Result<Tensor4> {
    let single = || -> Result<&Tensor4> {
        match inputs {
            [x] => Ok(*x),
            _ => Err(Error::shape(node, format!("{} takes one input", op.kind()))),
        }
    };
    match op {
        Op::Silu => Ok(kernels::silu_forward(single()?)),
        Op::Relu => Ok(kernels::relu_forward(single()?)),
        Op::MaxPool(p) => Ok(kernels::maxpool_forward(single()?, p, node)?.0),
        Op::UpsampleNearest2 => Ok(kernels::upsample2_forward(single()?)),
        Op::Concat => kernels::concat_forward(inputs, node),
        Op::Add => kernels::add_forward(inputs, node),
        Op::DetectHead { .. } => Ok(single()?.clone()),
        Op::Conv(_) | Op::BatchNorm { .. } => Err(Error::Config(format!(
            "`{node}`: {} needs parameters; use the graph executor",
            op.kind()
        ))),
    }
}

fn run(model: &GraphModel, input: &Tensor4, mode: Mode) -> Result<ForwardPass> {
    let topo = model.topology()?;
    let [c, h, w] = model.input_shape;
    if input.dims()[1..] != [c, h, w] {
        return Err(Error::shape(
            "input",
            format!("graph expects (N,{c},{h},{w}), got {:?}", input.dims()),
        ));
    }
    let n = model.nodes.len();
    let mut values: Vec<Option<Tensor4>> = (0..n).map(|_| None).collect();
    let mut caches: Vec<NodeCache> = (0..n).map(|_| NodeCache::None).collect();
    for &i in &topo.order {
        let node = &model.nodes[i];
        let ins: Vec<&Tensor4> = if topo.inputs[i].is_empty() {
            vec![input]
        } else {
            topo.inputs[i]
                .iter()
                .map(|&j| values[j].as_ref().expect("topological order"))
                .collect()
        };
        let out = match (&node.op, &node.params) {
            (Op::Conv(a), Some(LayerTensors::Conv(p))) => {
                kernels::conv2d_forward(ins[0], a, p, &node.id)?
            }
            (Op::BatchNorm { eps, .. }, Some(LayerTensors::BatchNorm(p))) => {
                let (y, cache) = kernels::batchnorm_forward(ins[0], p, *eps, mode, &node.id)?;
                caches[i] = NodeCache::Bn(cache);
                y
            }
            (Op::MaxPool(p), _) => {
                let (y, argmax) = kernels::maxpool_forward(ins[0], p, &node.id)?;
                caches[i] = NodeCache::Pool(argmax);
                y
            }
            (Op::Conv(_) | Op::BatchNorm { .. }, _) => {
                return Err(Error::Validation(format!(
                    "node `{}` has no parameters",
                    node.id
                )))
            }
            (op, _) => layer_forward(op, &ins, &node.id)?,
        };
        values[i] = Some(out);
    }
    Ok(ForwardPass {
        node_count: n,
        topo,
        input: input.clone(),
        values: values.into_iter().map(|v| v.expect("visited")).collect(),
        caches,
    })
}

/// Inference-mode forward returning the declared outputs in order.
pub fn infer(model: &GraphModel, input: &Tensor4) -> Result<Vec<Tensor4>> {
    let pass = run(model, input, Mode::Inference)?;
    Ok(pass
        .topo
        .outputs
        .iter()
        .map(|&o| pass.values[o].clone())
        .collect())
}

/// Records one forward pass and replays it backwards.
#[derive(Default)]
pub struct Tape {
    pass: Option<ForwardPass>,
    mode: Option<Mode>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Run the graph and record intermediates; returns the declared outputs.
    pub fn forward(
        &mut self,
        model: &GraphModel,
        input: &Tensor4,
        mode: Mode,
    ) -> Result<Vec<Tensor4>> {
        let pass = run(model, input, mode)?;
        let outs = pass
            .topo
            .outputs
            .iter()
            .map(|&o| pass.values[o].clone())
            .collect();
        self.pass = Some(pass);
        self.mode = Some(mode);
        Ok(outs)
    }

    /// Fold the recorded batch statistics into the running statistics.
    pub fn commit_running_stats(&self, model: &mut GraphModel) -> Result<()> {
        let pass = self
            .pass
            .as_ref()
            .ok_or_else(|| Error::State("no forward pass recorded".into()))?;
        if pass.node_count != model.nodes.len() {
            return Err(Error::State("model changed since the forward pass".into()));
        }
        for (node, cache) in model.nodes.iter_mut().zip(&pass.caches) {
            if let (Some(LayerTensors::BatchNorm(p)), NodeCache::Bn(c)) =
                (node.params.as_mut(), cache)
            {
                kernels::update_running_stats(p, c);
            }
        }
        Ok(())
    }

    /// Reverse-mode pass; consumes the recorded forward.
    ///
    /// `output_grads` holds one gradient per declared output, in order.
    pub fn backward(&mut self, model: &GraphModel, output_grads: &[Tensor4]) -> Result<Gradients> {
        let pass = self
            .pass
            .take()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        if pass.node_count != model.nodes.len() {
            return Err(Error::State("model changed since the forward pass".into()));
        }
        if output_grads.len() != pass.topo.outputs.len() {
            return Err(Error::State(format!(
                "expected {} output gradients, got {}",
                pass.topo.outputs.len(),
                output_grads.len()
            )));
        }
        let n = model.nodes.len();
        let mut grads: Vec<Option<Tensor4>> = (0..n).map(|_| None).collect();
        for (&o, g) in pass.topo.outputs.iter().zip(output_grads) {
            if g.dims() != pass.values[o].dims() {
                return Err(Error::shape(
                    &model.nodes[o].id,
                    "output gradient has the wrong shape",
                ));
            }
            accumulate(&mut grads[o], g.clone());
        }
        let mut result = Gradients::zeros_like(model, pass.input.dims());
        let mut input_grad = Tensor4::zeros(pass.input.dims());

        for &i in pass.topo.order.iter().rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &model.nodes[i];
            let x = pass.input_of(i, 0);
            let in_grads: Vec<Tensor4> = match (&node.op, &node.params) {
                (Op::Conv(a), Some(LayerTensors::Conv(p))) => {
                    let b = kernels::conv2d_backward(x, a, p, &dy, &node.id)?;
                    result.layers[i] = Some(LayerGrads::Conv {
                        weight: b.weight,
                        bias: b.bias,
                    });
                    vec![b.input]
                }
                (Op::BatchNorm { .. }, Some(LayerTensors::BatchNorm(p))) => {
                    let NodeCache::Bn(cache) = &pass.caches[i] else {
                        return Err(Error::State(format!(
                            "`{}` has no recorded statistics",
                            node.id
                        )));
                    };
                    let b = kernels::batchnorm_backward(p, cache, &dy);
                    result.layers[i] = Some(LayerGrads::BatchNorm {
                        gamma: b.gamma,
                        beta: b.beta,
                    });
                    vec![b.input]
                }
                (Op::Silu, _) => vec![kernels::silu_backward(x, &dy)],
                (Op::Relu, _) => vec![kernels::relu_backward(x, &dy)],
                (Op::MaxPool(_), _) => {
                    let NodeCache::Pool(argmax) = &pass.caches[i] else {
                        return Err(Error::State(format!(
                            "`{}` has no recorded argmax",
                            node.id
                        )));
                    };
                    vec![kernels::maxpool_backward(x.dims(), argmax, &dy)]
                }
                (Op::UpsampleNearest2, _) => vec![kernels::upsample2_backward(&dy)],
                (Op::Concat, _) => {
                    let counts: Vec<usize> = (0..pass.topo.inputs[i].len())
                        .map(|k| pass.input_of(i, k).channels())
                        .collect();
                    kernels::concat_backward(&counts, &dy)
                }
                (Op::Add, _) => vec![dy; pass.topo.inputs[i].len()],
                (Op::DetectHead { .. }, _) => vec![dy],
                _ => {
                    return Err(Error::Validation(format!(
                        "node `{}` has no parameters",
                        node.id
                    )))
                }
            };
            if pass.topo.inputs[i].is_empty() {
                input_grad.add_assign(&in_grads[0])?;
            } else {
                for (&j, g) in pass.topo.inputs[i].iter().zip(in_grads) {
                    accumulate(&mut grads[j], g);
                }
            }
        }
        result.input = input_grad;
        Ok(result)
    }

    pub fn mode(&self) -> Option<Mode> {
        self.mode
    }
}

fn accumulate(slot: &mut Option<Tensor4>, g: Tensor4) {
    match slot {
        Some(acc) => acc.add_assign(&g).expect("gradient shapes agree"),
        None => *slot = Some(g),
    }
}
