//! Whole-pipeline run configuration.
//!
//! A config file is a partial JSON object deep-merged over
//! [`RunConfig::default`], so any nested field may be omitted. The global
//! seed always propagates to every stochastic component.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bench::{SceneConfig, ToyDetConfig};
use crate::error::{Error, Result};
use crate::metrics::coco_thresholds;
use crate::prune::{PruneConfig, SparseConfig};
use crate::seeds::child_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsOptions {
    pub iou_thresholds: Vec<f64>,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        MetricsOptions {
            iou_thresholds: coco_thresholds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub scene: SceneConfig,
    pub n_train: usize,
    pub n_val: usize,
    pub detector: ToyDetConfig,
    /// Baseline training (λ = 0).
    pub train: SparseConfig,
    pub sparse: SparseConfig,
    /// Fine-tuning after pruning (λ forced to 0).
    pub finetune: SparseConfig,
    pub prune: PruneConfig,
    pub metrics: MetricsOptions,
    /// Bindings / command templates file for `hmi-run`.
    pub hmi_bindings: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let base = SparseConfig {
            lambda: 0.0,
            epochs: 30,
            learning_rate: 0.03,
            momentum: 0.9,
            batch_size: 16,
            seed: 0,
        };
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            scene: SceneConfig::default(),
            n_train: 200,
            n_val: 50,
            detector: ToyDetConfig::default(),
            train: base.clone(),
            sparse: SparseConfig {
                lambda: 1e-2,
                epochs: 10,
                batch_size: 8,
                ..base.clone()
            },
            finetune: SparseConfig { epochs: 15, ..base },
            prune: PruneConfig::with_rate(0.2),
            metrics: MetricsOptions::default(),
            hmi_bindings: None,
        }
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let patch: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if !patch.is_object() {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        let mut doc = serde_json::to_value(RunConfig::default())?;
        merge(&mut doc, patch);
        let cfg: RunConfig =
            serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
        let seed = cfg.seed;
        Ok(cfg.with_seed(seed))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Set the global seed and derive every component seed from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.scene.seed = seed;
        self.detector.seed = child_seed(seed, "init");
        self.train.seed = seed;
        self.sparse.seed = child_seed(seed, "sparse");
        self.finetune.seed = child_seed(seed, "finetune");
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.detector.validate()?;
        for c in [&self.train, &self.sparse, &self.finetune] {
            c.validate()?;
        }
        self.prune.validate()?;
        if self.n_train == 0 || self.n_val == 0 {
            return Err(Error::Config("n_train and n_val must be positive".into()));
        }
        if self.scene.image_size != self.detector.image_size
            || self.scene.classes != self.detector.classes
        {
            return Err(Error::Config(
                "scene and detector disagree on image size or class count".into(),
            ));
        }
        let t = &self.metrics.iou_thresholds;
        if t.is_empty() || t.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(
                "IoU thresholds must be a non-empty list in [0,1]".into(),
            ));
        }
        if let Some(p) = &self.hmi_bindings {
            if !p.is_file() {
                return Err(Error::Config(format!(
                    "hmi bindings file {} not found",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}
