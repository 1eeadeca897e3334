//! Declarative experiment files and their resolution against command-line overrides.

use std::path::{Path, PathBuf};

use hsi_core::sampler::AugmentSpec;
use hsi_core::DataConfig;
use hsi_models::{ModelError, ModelRegistry, ModelSpec, OptimizerKind};
use hsi_train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::args::RunArgs;
use crate::{CliError, Result};

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_patch() -> usize {
    63
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    /// Configurations trained by `run` and fine-tuned by `finetune`.
    #[serde(default)]
    pub configs: Vec<String>,
    #[serde(default)]
    pub models: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Output directory; relative paths are taken from the file's directory.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Synthetic scene file used instead of the manifest.
    #[serde(default)]
    pub synthetic: Option<PathBuf>,
    /// Nominal patch side; spectral-only models read the centre pixel.
    #[serde(default = "default_patch")]
    pub patch_size: usize,
    #[serde(default = "one")]
    pub train_stride: usize,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub pretrain: Option<PretrainSection>,
    #[serde(default)]
    pub finetune: Option<FinetuneSection>,
}

/// Settings replacing the per-model defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub lr0: Option<f64>,
    pub milestones: Option<Vec<usize>>,
    pub gamma: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub patience: Option<usize>,
    pub optimizer: Option<OptimizerKind>,
    /// `false` disables augmentation.
    pub augment: Option<bool>,
    pub eval_batch_size: Option<usize>,
}

impl TrainOverrides {
    pub fn apply(&self, spec: &ModelSpec) -> TrainConfig {
        let mut c = TrainConfig::for_model(spec);
        if let Some(v) = self.lr0 {
            c.lr0 = v;
        }
        if let Some(v) = &self.milestones {
            c.milestones = v.clone();
        }
        if let Some(v) = self.gamma {
            c.gamma = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.patience {
            c.patience = v;
        }
        if let Some(v) = self.optimizer {
            c.optimizer = v;
        }
        if let Some(v) = self.augment {
            c.augment = v.then(AugmentSpec::default);
        }
        if let Some(v) = self.eval_batch_size {
            c.eval_batch_size = v;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    pub configs: Vec<String>,
    /// Wavelength range of the backbone; defaults to the span of the pretraining grids.
    #[serde(default)]
    pub range_nm: Option<(f64, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSection {
    /// Checkpoint to start from; defaults to `<out>/pretrained/<model>/seed<k>.json`.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path`, applies the overrides in `args` and resolves relative paths.
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let text = std::fs::read_to_string(&args.experiment)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", args.experiment.display())))?;
        let mut exp = Self::parse(&text)?;
        let base = args.experiment.parent().map(Path::to_path_buf).unwrap_or_default();
        let rebase = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        exp.out = exp.out.map(rebase);
        exp.synthetic = exp.synthetic.map(rebase);
        if let Some(f) = &mut exp.finetune {
            f.checkpoint = f.checkpoint.take().map(rebase);
        }
        if !args.configs.is_empty() {
            exp.configs = args.configs.clone();
        }
        if !args.models.is_empty() {
            exp.models = args.models.clone();
        }
        if !args.seeds.is_empty() {
            exp.seeds = args.seeds.clone();
        }
        if let Some(o) = &args.out {
            exp.out = Some(o.clone());
        }
        if let Some(s) = &args.synthetic {
            exp.synthetic = Some(s.clone());
        }
        Ok(exp)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("results"))
    }

    pub fn results_path(&self) -> PathBuf {
        self.out_dir().join("results.jsonl")
    }

    /// Schema checks that need no data: ids parse, models are implemented,
    /// settings are valid.
    pub fn validate(&self, registry: &ModelRegistry) -> Result<()> {
        if self.models.is_empty() {
            return Err(CliError::Invalid("no models given".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Invalid("no seeds given".into()));
        }
        if self.patch_size == 0 || self.train_stride == 0 {
            return Err(CliError::Invalid("patch_size and train_stride must be >= 1".into()));
        }
        let mut ids: Vec<&String> = self.configs.iter().collect();
        if let Some(p) = &self.pretrain {
            ids.extend(&p.configs);
        }
        for id in ids {
            id.parse::<DataConfig>()?;
        }
        for m in &self.models {
            let spec = registry.spec(m)?;
            if !registry.implemented().contains(&m.as_str()) {
                return Err(ModelError::NotImplemented(format!(
                    "{m} is a plugin slot without a registered implementation"
                ))
                .into());
            }
            self.train.apply(spec).validate()?;
        }
        Ok(())
    }
}
