//! Experiment runner: downloads, split export, training, pretraining,
//! fine-tuning and reporting driven by declarative experiment files.

pub mod args;
pub mod commands;
pub mod experiment;
pub mod source;

use hsi_models::ModelError;
use hsi_train::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] hsi_core::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("experiment file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    fn core(&self) -> Option<&hsi_core::Error> {
        match self {
            CliError::Core(e) | CliError::Train(TrainError::Core(e)) => Some(e),
            _ => None,
        }
    }

    /// 2 for integrity failures, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self.core() {
            Some(hsi_core::Error::Integrity { .. }) => 2,
            _ => 1,
        }
    }

    pub fn hint(&self) -> Option<&'static str> {
        match self.core() {
            Some(hsi_core::Error::ConfigNotInManifest(_)) | Some(hsi_core::Error::InvalidConfig(_)) => {
                Some("`hsi-bench list` prints the known configuration ids")
            }
            Some(hsi_core::Error::Fetch { .. }) => {
                Some("place the files in the cache directory (--cache or HSI_BENCH_CACHE) or check network access")
            }
            _ => match self {
                CliError::Model(ModelError::UnknownModel(_)) => Some("`hsi-bench list` prints the registered models"),
                _ => None,
            },
        }
    }
}
