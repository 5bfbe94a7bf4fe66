//! Desk-scale detection bench: synthetic shape data, a toy detector, its
//! loss and decoding, and the train/evaluate loops around them.

pub mod dataset;
pub mod decode;
pub mod loss;
pub mod scene;
pub mod toydet;

pub use dataset::{
    generate_dataset, read_dataset, write_dataset, Dataset, DatasetSplits, Manifest,
};
pub use decode::{decode_and_nms, decode_cells, nms};
pub use loss::{assign_targets, det_loss};
pub use scene::{SceneConfig, SceneObject};
pub use toydet::{build_toydet, ToyDetConfig};

use crate::error::{Error, Result};
use crate::graph::GraphModel;
use crate::metrics::{evaluate as evaluate_boxes, BoxDet, MetricsReport};
use crate::prune::train::{fine_tune, train_loop, FineTuneOutcome, TrainOutcome, TrainTask};
use crate::prune::SparseConfig;
use crate::runtime::infer;
use crate::tensor::Tensor4;

const EVAL_BATCH: usize = 16;

/// A dataset seen through the detector's loss.
pub struct DetTask<'a> {
    pub data: &'a Dataset,
    pub det: &'a ToyDetConfig,
}

impl<'a> DetTask<'a> {
    pub fn new(data: &'a Dataset, det: &'a ToyDetConfig) -> Result<Self> {
        check_compatible(data, det)?;
        Ok(DetTask { data, det })
    }
}

impl TrainTask for DetTask<'_> {
    fn len(&self) -> usize {
        self.data.len()
    }

    fn batch(&self, indices: &[usize]) -> Result<Tensor4> {
        self.data.batch(indices)
    }

    fn loss(&self, indices: &[usize], outputs: &[Tensor4]) -> Result<(f64, Vec<Tensor4>)> {
        let [raw] = outputs else {
            return Err(Error::shape(
                "head",
                format!("expected one output, got {}", outputs.len()),
            ));
        };
        let targets: Vec<&[SceneObject]> = indices
            .iter()
            .map(|&i| self.data.scenes[i].objects.as_slice())
            .collect();
        let (l, g) = det_loss(self.det, raw, &targets)?;
        Ok((l, vec![g]))
    }
}

fn check_compatible(data: &Dataset, det: &ToyDetConfig) -> Result<()> {
    det.validate()?;
    if data.image_size != det.image_size {
        return Err(Error::Config(format!(
            "dataset images are {}px but the detector expects {}px",
            data.image_size, det.image_size
        )));
    }
    if data.num_classes() != det.classes {
        return Err(Error::Config(format!(
            "dataset has {} classes but the detector has {}",
            data.num_classes(),
            det.classes
        )));
    }
    Ok(())
}

/// Minibatch training with the detection loss (plus the γ penalty when
/// `cfg.lambda > 0`).
pub fn train(
    model: GraphModel,
    data: &Dataset,
    det: &ToyDetConfig,
    cfg: &SparseConfig,
) -> Result<TrainOutcome> {
    train_loop(model, &DetTask::new(data, det)?, cfg)
}

/// Decoded, NMS-filtered detections for every image, image ids in dataset order.
pub fn predict(model: &GraphModel, data: &Dataset, det: &ToyDetConfig) -> Result<Vec<BoxDet>> {
    check_compatible(data, det)?;
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::new();
    for chunk in indices.chunks(EVAL_BATCH) {
        let x = data.batch(chunk)?;
        let outputs = infer(model, &x)?;
        let raw = outputs
            .first()
            .ok_or_else(|| Error::shape("head", "model has no outputs"))?;
        let g = det.grid();
        if raw.dims() != [chunk.len(), det.head_channels(), g, g] {
            return Err(Error::shape(
                "head",
                format!(
                    "head output {:?} does not match the detector config",
                    raw.dims()
                ),
            ));
        }
        for (n, &image_id) in chunk.iter().enumerate() {
            out.extend(decode_and_nms(det, raw, n, image_id));
        }
    }
    Ok(out)
}

pub fn evaluate(model: &GraphModel, data: &Dataset, det: &ToyDetConfig) -> Result<MetricsReport> {
    let dets = predict(model, data, det)?;
    evaluate_boxes(&dets, &data.ground_truth(), data.num_classes())
}

/// Plain fine-tuning that keeps the checkpoint with the best validation mAP@50.
pub fn finetune(
    model: GraphModel,
    train_data: &Dataset,
    val_data: &Dataset,
    det: &ToyDetConfig,
    cfg: &SparseConfig,
) -> Result<FineTuneOutcome> {
    let task = DetTask::new(train_data, det)?;
    fine_tune(
        model,
        &task,
        cfg,
        &|m| Ok(evaluate(m, val_data, det)?.map50),
    )
}
