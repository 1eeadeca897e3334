//! Standardized training, multi-configuration pretraining, fine-tuning,
//! evaluation, the results store and the ranking report.

pub mod config;
pub mod data;
pub mod fit;
pub mod report;
pub mod results;

pub use config::{PretrainPlan, TrainConfig};
pub use data::{build_params, prepare, split_for, PrepareOptions, PreparedConfig};
pub use fit::{evaluate, finetune, pretrain, train, Evaluation, FitOutcome};
pub use report::{aggregate_and_rank, Report};
pub use results::{ResultStore, RunResult};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Core(#[from] hsi_core::Error),
    #[error(transparent)]
    Model(#[from] hsi_models::ModelError),
    #[error(transparent)]
    Nn(#[from] hsi_nn::NnError),
    #[error("training diverged at epoch {epoch}, batch {batch} ({config}): {detail}")]
    Diverged { epoch: usize, batch: usize, config: String, detail: String },
    #[error("empty {split} split for {config}")]
    EmptySplit { config: String, split: &'static str },
    #[error("test isolation violated: {0}")]
    Leak(String),
    #[error("invalid setting: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;
