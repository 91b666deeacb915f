use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use crate::cohort::{Modality, Task};
use crate::error::{Error, Result};
use crate::models::ArchId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub arch: ArchId,
    /// Input of the single-modality architecture.
    pub modality: Modality,
    pub width: f64,
    pub epochs: usize,
    /// Defaults to 16 for single and 8 for the fusions.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub dropout_p: f64,
    pub checkpoint_interval: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::NlAd,
            arch: ArchId::Single,
            modality: Modality::MRI,
            width: 1.0,
            epochs: 150,
            batch_size: None,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            dropout_p: 0.5,
            checkpoint_interval: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Reads TOML, or JSON when the file name ends in `.json`.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or(if self.arch.is_fusion() { 8 } else { 16 })
    }

    /// Fills defaulted fields so the printed form is fully explicit.
    pub fn resolved(&self) -> Self {
        Self {
            batch_size: Some(self.batch_size()),
            ..self.clone()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size() == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.epochs == 0 || self.checkpoint_interval == 0 {
            return bad("epochs and checkpoint_interval must be at least 1".into());
        }
        for (n, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{n} = {b} must lie in (0, 1)"));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0 && self.adam_eps > 0.0) {
            return bad("learning_rate and adam_eps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p = {} must lie in [0, 1)", self.dropout_p));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return bad(format!("width = {} must be positive", self.width));
        }
        Ok(())
    }

    /// Epochs at which a checkpoint is written.
    pub fn checkpoint_epochs(&self) -> Vec<usize> {
        (1..=self.epochs)
            .filter(|e| e % self.checkpoint_interval == 0 || *e == self.epochs)
            .collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.resolved()).unwrap_or_default()
    }
}
