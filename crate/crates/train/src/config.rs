use hsi_core::sampler::AugmentSpec;
use hsi_models::{ModelSpec, OptimizerKind};
use serde::{Deserialize, Serialize};

use crate::{Result, TrainError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Zero-based epoch indices at whose start the rate is multiplied by `gamma`.
    pub milestones: Vec<usize>,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without a new best validation loss before stopping.
    pub patience: usize,
    pub optimizer: OptimizerKind,
    /// Training-time augmentation; `None` disables it.
    pub augment: Option<AugmentSpec>,
    pub eval_batch_size: usize,
    /// Evaluate the training split after every epoch.
    #[serde(default)]
    pub track_train_accuracy: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            milestones: vec![30, 45],
            gamma: 0.1,
            epochs: 50,
            batch_size: 32,
            patience: 10,
            optimizer: OptimizerKind::Adam,
            augment: Some(AugmentSpec::default()),
            eval_batch_size: 256,
            track_train_accuracy: false,
        }
    }
}

impl TrainConfig {
    /// Defaults with the model's hyperparameter overrides applied.
    pub fn for_model(spec: &ModelSpec) -> Self {
        let h = &spec.hyperparameters;
        Self { lr0: h.lr, epochs: h.epochs, batch_size: h.batch_size, optimizer: h.optimizer, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Invalid(m));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2 for batch normalisation".into());
        }
        if self.eval_batch_size == 0 {
            return bad("eval batch size must be >= 1".into());
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }

    /// Step-decayed rate for `epoch` starting from `base`.
    pub fn lr_from(&self, base: f64, epoch: usize) -> f64 {
        let k = self.milestones.iter().filter(|&&m| epoch >= m).count();
        (0..k).fold(base, |lr, _| lr * self.gamma)
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr_from(self.lr0, epoch)
    }
}

/// Joint training of one backbone on several configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainPlan {
    pub configs: Vec<String>,
}

impl PretrainPlan {
    pub fn new(configs: Vec<String>) -> Result<Self> {
        if configs.is_empty() {
            return Err(TrainError::Invalid("a pretraining plan needs at least one configuration".into()));
        }
        Ok(Self { configs })
    }

    pub fn n(&self) -> usize {
        self.configs.len()
    }

    /// `lr0 / N`.
    pub fn lr(&self, lr0: f64) -> f64 {
        lr0 / self.n() as f64
    }
}
