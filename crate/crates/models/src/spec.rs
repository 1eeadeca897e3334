use hsi_core::cube::PreprocessSpec;
use serde::{Deserialize, Serialize};

use crate::{ModelError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Per-model training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self { batch_size: 32, epochs: 50, lr: 0.01, optimizer: OptimizerKind::Adam }
    }
}

/// Models whose hyperparameters deviate from the defaults.
pub fn hyperparameter_overrides() -> Vec<(&'static str, Hyperparams)> {
    let d = Hyperparams::default;
    vec![
        ("mlp", Hyperparams { lr: 0.001, ..d() }),
        ("3d_cnn", Hyperparams { batch_size: 8, ..d() }),
        ("deephs_hybrid_net", Hyperparams { batch_size: 4, ..d() }),
        ("spectralnet", Hyperparams { batch_size: 8, optimizer: OptimizerKind::Sgd, ..d() }),
        ("hybridsn", Hyperparams { batch_size: 16, lr: 0.0001, ..d() }),
        ("attention_cnn", Hyperparams { lr: 0.0001, ..d() }),
        ("hit", Hyperparams { batch_size: 16, epochs: 100, ..d() }),
    ]
}

pub fn hyperparameters(name: &str) -> Hyperparams {
    hyperparameter_overrides().into_iter().find(|(n, _)| *n == name).map(|(_, h)| h).unwrap_or_default()
}

/// How the first layer consumes bands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StemKind {
    /// One weight slice per input channel; fixed band count.
    Channel,
    /// Weights generated from band wavelengths; any grid inside the range.
    Wavelength,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub input: PreprocessSpec,
    pub spatial_context: bool,
    pub stem: StemKind,
    pub hyperparameters: Hyperparams,
}

impl ModelSpec {
    pub fn new(name: &str, input: PreprocessSpec, spatial_context: bool, stem: StemKind) -> Self {
        Self { name: name.to_string(), input, spatial_context, stem, hyperparameters: hyperparameters(name) }
    }

    /// Side length of the patch the model reads; spectral-only models read one pixel.
    pub fn input_extent(&self, patch: usize) -> usize {
        if self.spatial_context {
            patch
        } else {
            1
        }
    }

    pub fn check_input(&self, input: &PreprocessSpec) -> Result<()> {
        if self.stem == StemKind::Wavelength && !input.keeps_wavelengths() {
            return Err(ModelError::Incompatible(format!(
                "{} derives its first layer from band wavelengths; {:?} input discards them",
                self.name, input.mode
            )));
        }
        Ok(())
    }
}

/// Built-in zoo members in presentation order.
pub fn zoo_specs() -> Vec<ModelSpec> {
    use StemKind::{Channel, Wavelength};
    let raw = PreprocessSpec::RAW;
    vec![
        ModelSpec::new("mlp", raw, false, Channel),
        ModelSpec::new("rnn", raw, false, Channel),
        ModelSpec::new("1d_cnn", raw, false, Channel),
        ModelSpec::new("2d_cnn", PreprocessSpec::pca(40), true, Channel),
        ModelSpec::new("2d_cnn_spatial", PreprocessSpec::SPECTRAL_MEAN, true, Channel),
        ModelSpec::new("2d_cnn_spectral", raw, false, Channel),
        ModelSpec::new("3d_cnn", PreprocessSpec::pca(40), true, Channel),
        ModelSpec::new("deephs_net", raw, true, Channel),
        ModelSpec::new("deephs_net_hyve", raw, true, Wavelength),
        ModelSpec::new("deephs_net_hyve_large", raw, true, Wavelength),
        ModelSpec::new("resnet18", raw, true, Channel),
        ModelSpec::new("resnet18_hyve", raw, true, Wavelength),
        ModelSpec::new("resnet152", raw, true, Channel),
        ModelSpec::new("resnet152_hyve", raw, true, Wavelength),
    ]
}

/// Names reserved for externally supplied implementations.
pub fn plugin_slots() -> Vec<ModelSpec> {
    use StemKind::Channel;
    let raw = PreprocessSpec::RAW;
    vec![
        ModelSpec::new("svm", PreprocessSpec::pca(10), false, Channel),
        ModelSpec::new("pls_da", raw, false, Channel),
        ModelSpec::new("gabor_cnn", PreprocessSpec::pca(3), true, Channel),
        ModelSpec::new("emp_cnn", PreprocessSpec::pca(3), true, Channel),
        ModelSpec::new("deephs_hybrid_net", raw, true, Channel),
        ModelSpec::new("spectralnet", raw, true, Channel),
        ModelSpec::new("hybridsn", PreprocessSpec::pca(30), true, Channel),
        ModelSpec::new("attention_cnn", raw, false, Channel),
        ModelSpec::new("spectralformer", raw, true, Channel),
        ModelSpec::new("hit", raw, true, Channel),
    ]
}
