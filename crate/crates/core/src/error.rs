use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid wavelength grid: {0}")]
    InvalidGrid(String),
    #[error("invalid cube: {0}")]
    InvalidCube(String),
    #[error("invalid label mask: {0}")]
    InvalidMask(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no training pixels")]
    NoTrainingPixels,
    #[error("insufficient samples: {n} samples for {k} components")]
    InsufficientSamples { n: usize, k: usize },
    #[error("preprocessing: {0}")]
    Preprocess(String),
    #[error("manifest parse error ({context}): {message}")]
    Manifest { context: String, message: String },
    #[error("config not in manifest: {0}")]
    ConfigNotInManifest(String),
    #[error("integrity error for {uri}: expected sha256 {expected}, got {actual}")]
    Integrity { uri: String, expected: String, actual: String },
    #[error("fetch error for {uri}: {reason}")]
    Fetch { uri: String, reason: String },
    #[error("load error for {path:?}: {message}")]
    Load { path: PathBuf, message: String },
    #[error("shape mismatch for {scene}: expected {expected:?}, found {found:?}")]
    ShapeMismatch { scene: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("split error: {0}")]
    Split(String),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("sampler: {0}")]
    Sampler(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn load(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Load { path: path.into(), message: message.into() }
    }
}
