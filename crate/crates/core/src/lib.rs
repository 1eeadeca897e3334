//! Data side of the hyperspectral benchmark: cube types, the dataset registry,
//! deterministic splits and the sample streams fed to the models.

pub mod cube;
pub mod error;
pub mod io;
pub mod registry;
pub mod rng;
pub mod sampler;
pub mod splits;
pub mod synthetic;

pub use cube::{
    DataConfig, DatasetId, HyperspectralCube, LabelMask, LabelTarget, Recording, SpectralAxis, TaskKind, TrainRatio,
    WavelengthGrid,
};
pub use error::{Error, Result};
