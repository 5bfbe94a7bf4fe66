//! Minibatch SGD over any [`TrainTask`], with the optional L1 subgradient on
//! batch-norm γ.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::SparseConfig;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::graph::GraphModel;
use crate::runtime::params::{LayerGrads, LayerTensors};
use crate::runtime::{sgd_step, Gradients, Mode, OptState, Tape};
use crate::seeds::child_seed;
use crate::tensor::Tensor4;

/// Supplies minibatches and the task loss for a graph.
pub trait TrainTask: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn batch(&self, indices: &[usize]) -> Result<Tensor4>;

    /// Loss over the batch and its gradient with respect to every graph
    /// output, in declared order.
    fn loss(&self, indices: &[usize], outputs: &[Tensor4]) -> Result<(f64, Vec<Tensor4>)>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean task loss over the epoch's minibatches.
    pub task_loss: f64,
    /// `λ·Σ|γ|` at the end of the epoch.
    pub penalty: f64,
    pub median_abs_gamma: f64,
    pub frac_below_0_01: f64,
    pub val_map50: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GraphModel,
    pub log: Vec<EpochStats>,
}

#[derive(Debug, Clone)]
pub struct FineTuneOutcome {
    pub model: GraphModel,
    pub log: Vec<EpochStats>,
    /// 0 means the starting weights were never beaten.
    pub best_epoch: usize,
    pub best_map50: f64,
    pub final_map50: f64,
}

fn abs_gammas(model: &GraphModel) -> Vec<f64> {
    model
        .nodes
        .iter()
        .filter_map(|n| match &n.params {
            Some(LayerTensors::BatchNorm(p)) => Some(p.gamma.iter().map(|g| g.abs())),
            _ => None,
        })
        .flatten()
        .collect()
}

pub fn gamma_l1(model: &GraphModel) -> f64 {
    abs_gammas(model).iter().sum()
}

/// Median |γ| across all batch-norm channels (mean of the middle pair for
/// even counts).
pub fn median_abs_gamma(model: &GraphModel) -> f64 {
    let mut v = abs_gammas(model);
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Add `λ·sign(γ)` (with sign(0) = 0) to every batch-norm γ gradient.
pub fn apply_l1_subgradient(model: &GraphModel, grads: &mut Gradients, lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    for (node, g) in model.nodes.iter().zip(grads.layers.iter_mut()) {
        if let (Some(LayerTensors::BatchNorm(p)), Some(LayerGrads::BatchNorm { gamma, .. })) =
            (&node.params, g)
        {
            for (dg, v) in gamma.iter_mut().zip(&p.gamma) {
                let sign = if *v > 0.0 {
                    1.0
                } else if *v < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *dg += lambda * sign;
            }
        }
    }
}

fn stats(model: &GraphModel, epoch: usize, task_loss: f64, lambda: f64) -> EpochStats {
    let g = abs_gammas(model);
    let below = g.iter().filter(|v| **v < 0.01).count();
    EpochStats {
        epoch,
        task_loss,
        penalty: lambda * g.iter().sum::<f64>(),
        median_abs_gamma: median_abs_gamma(model),
        frac_below_0_01: if g.is_empty() {
            0.0
        } else {
            below as f64 / g.len() as f64
        },
        val_map50: None,
    }
}

fn run_epochs(
    mut model: GraphModel,
    task: &dyn TrainTask,
    cfg: &SparseConfig,
    mut after_epoch: impl FnMut(&GraphModel, &mut EpochStats) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if task.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    model.validate()?;
    let mut opt = OptState::new(&model, cfg.learning_rate, cfg.momentum)?;
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, "shuffle"));
    let mut order: Vec<usize> = (0..task.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let x = task.batch(idx)?;
            let mut tape = Tape::new();
            let outputs = tape.forward(&model, &x, Mode::Train)?;
            let (loss, out_grads) = task.loss(idx, &outputs)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: format!("task loss became {loss}"),
                });
            }
            tape.commit_running_stats(&mut model)?;
            let mut grads = tape.backward(&model, &out_grads)?;
            apply_l1_subgradient(&model, &mut grads, cfg.lambda);
            sgd_step(&mut model, &grads, &mut opt)?;
            loss_sum += loss;
            batches += 1;
        }
        let finite = model
            .nodes
            .iter()
            .filter_map(|n| n.params.as_ref())
            .all(|p| match p {
                LayerTensors::Conv(c) => c.weight.iter().all(|v| v.is_finite()),
                LayerTensors::BatchNorm(b) => b.gamma.iter().chain(&b.beta).all(|v| v.is_finite()),
            });
        if !finite {
            return Err(Error::Training {
                epoch,
                reason: "parameters became non-finite".into(),
            });
        }
        let mut s = stats(&model, epoch, loss_sum / batches as f64, cfg.lambda);
        after_epoch(&model, &mut s)?;
        log::debug!(
            "epoch {epoch}: loss {:.4} median|γ| {:.4}",
            s.task_loss,
            s.median_abs_gamma
        );
        log.push(s);
    }
    Ok(TrainOutcome { model, log })
}

/// Plain training when `cfg.lambda == 0`, sparse training otherwise.
pub fn train_loop(
    model: GraphModel,
    task: &dyn TrainTask,
    cfg: &SparseConfig,
) -> Result<TrainOutcome> {
    run_epochs(model, task, cfg, |_, _| Ok(()))
}

/// Train task loss plus `λ·Σ|γ|`, updating weights and γ together.
pub fn sparse_train(
    model: GraphModel,
    task: &dyn TrainTask,
    cfg: &SparseConfig,
) -> Result<TrainOutcome> {
    train_loop(model, task, cfg)
}

/// Plain training (λ forced to 0) that returns the checkpoint with the best
/// validation mAP@50, the starting weights included.
pub fn fine_tune(
    model: GraphModel,
    task: &dyn TrainTask,
    cfg: &SparseConfig,
    validate: &dyn Fn(&GraphModel) -> Result<f64>,
) -> Result<FineTuneOutcome> {
    let cfg = SparseConfig {
        lambda: 0.0,
        ..cfg.clone()
    };
    let initial = validate(&model)?;
    let mut best = (0usize, initial, model.clone());
    let mut last = initial;
    let outcome = run_epochs(model, task, &cfg, |m, s| {
        let score = validate(m)?;
        s.val_map50 = Some(score);
        last = score;
        if score > best.1 {
            best = (s.epoch, score, m.clone());
        }
        Ok(())
    })?;
    Ok(FineTuneOutcome {
        model: best.2,
        log: outcome.log,
        best_epoch: best.0,
        best_map50: best.1,
        final_map50: last,
    })
}

/// CSV columns: epoch, median_abs_gamma, frac_below_0.01, task_loss, penalty.
pub fn gamma_log_csv(log: &[EpochStats]) -> String {
    let mut out = String::from("epoch,median_abs_gamma,frac_below_0.01,task_loss,penalty\n");
    for s in log {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.epoch, s.median_abs_gamma, s.frac_below_0_01, s.task_loss, s.penalty
        ));
    }
    out
}

pub fn write_gamma_log(path: &Path, log: &[EpochStats]) -> Result<()> {
    write_atomic(path, gamma_log_csv(log).as_bytes())
}
