//! Momentum SGD: `v ← momentum·v + g`, `p ← p − lr·v`.

use crate::error::{Error, Result};
use crate::graph::GraphModel;
use crate::runtime::exec::Gradients;
use crate::runtime::params::{trainable_buffers_mut, LayerGrads};

#[derive(Debug, Clone)]
pub struct OptState {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Velocity per node, shaped like that node's gradients.
    pub velocity: Vec<Option<LayerGrads>>,
}

impl OptState {
    pub fn new(model: &GraphModel, learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0,1), got {momentum}"
            )));
        }
        Ok(OptState {
            learning_rate,
            momentum,
            velocity: model
                .nodes
                .iter()
                .map(|n| n.params.as_ref().map(LayerGrads::zeros_like))
                .collect(),
        })
    }
}

/// In-place update of one flat buffer.
pub fn sgd_update(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    learning_rate: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::shape(
            "sgd",
            format!(
                "param/grad/velocity lengths {}/{}/{} differ",
                params.len(),
                grads.len(),
                velocity.len()
            ),
        ));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= learning_rate * *v;
    }
    Ok(())
}

/// Apply one optimizer step to every trainable parameter of `model`.
pub fn sgd_step(model: &mut GraphModel, grads: &Gradients, opt: &mut OptState) -> Result<()> {
    if grads.layers.len() != model.nodes.len() || opt.velocity.len() != model.nodes.len() {
        return Err(Error::shape("sgd", "gradient set does not match the model"));
    }
    let (lr, mom) = (opt.learning_rate, opt.momentum);
    for ((node, g), v) in model
        .nodes
        .iter_mut()
        .zip(&grads.layers)
        .zip(opt.velocity.iter_mut())
    {
        let (Some(params), Some(g), Some(v)) = (node.params.as_mut(), g.as_ref(), v.as_mut())
        else {
            if node.params.is_some() && (g.is_none() || v.is_none()) {
                return Err(Error::shape(
                    &node.id,
                    "missing gradient or velocity buffer",
                ));
            }
            continue;
        };
        let pbufs = trainable_buffers_mut(params);
        let gbufs = g.buffers();
        let vbufs = v.buffers_mut();
        if pbufs.len() != gbufs.len() || pbufs.len() != vbufs.len() {
            return Err(Error::shape(
                &node.id,
                "parameter and gradient layouts differ",
            ));
        }
        for ((p, g), v) in pbufs.into_iter().zip(gbufs).zip(vbufs) {
            sgd_update(p, g, v, lr, mom)
                .map_err(|_| Error::shape(&node.id, "sgd buffer length mismatch"))?;
        }
    }
    Ok(())
}
