//! Model zoo: backbone builders, multi-head wrapper, registry and checkpoints.

pub mod checkpoint;
pub mod model;
pub mod registry;
pub mod rgb;
pub mod spec;
pub mod zoo;

pub use checkpoint::Checkpoint;
pub use model::{Backbone, BackboneHeadModel, BuildParams, Head};
pub use registry::{BuildFn, ModelRegistry};
pub use spec::{hyperparameters, Hyperparams, ModelSpec, OptimizerKind, StemKind};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("{0}")]
    NotImplemented(String),
    #[error("incompatible input: {0}")]
    Incompatible(String),
    #[error("head: {0}")]
    Head(String),
    #[error("wavelength coverage: {0}")]
    Coverage(String),
    #[error(transparent)]
    Nn(#[from] hsi_nn::NnError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;
