//! Where configuration data comes from: the dataset manifest and cache, or a
//! synthetic scene file.

use std::path::{Path, PathBuf};

use hsi_core::registry::{builtin_manifest, fetch_assets, load_scene, DatasetManifest, SceneData};
use hsi_core::splits::{assign_hrss_split, SplitAssignment, SplitSpec};
use hsi_core::synthetic::{generate_synthetic, SyntheticSpec};
use hsi_core::{DataConfig, DatasetId, TaskKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, Result};

fn quarter() -> f64 {
    0.25
}

/// One synthetic scene standing in for a patchwise configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticScene {
    /// Configuration id the scene answers to, e.g. `hrss/syn_a/synthetic/patchwise/r0.3`.
    pub config: String,
    /// Generation seed.
    #[serde(default)]
    pub seed: u64,
    /// Split seed; 0 is the canonical split.
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "quarter")]
    pub val_fraction: f64,
    pub spec: SyntheticSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticFile {
    pub scene: Vec<SyntheticScene>,
}

impl SyntheticFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: Self = toml::from_str(text)?;
        for s in &file.scene {
            let c: DataConfig = s.config.parse()?;
            if c.dataset != DatasetId::Hrss || s.spec.task_kind != TaskKind::Patchwise {
                return Err(CliError::Invalid(format!(
                    "{}: synthetic scenes stand in for patchwise configurations with a train ratio",
                    s.config
                )));
            }
            s.spec.validate()?;
        }
        Ok(file)
    }
}

/// Scene data and split of one configuration.
pub struct Loaded {
    pub config: DataConfig,
    pub data: SceneData,
    pub split: SplitAssignment,
}

pub enum DataSource {
    Manifest { manifest: DatasetManifest, cache: PathBuf },
    Synthetic { file: SyntheticFile, hash: String },
}

impl DataSource {
    pub fn open(synthetic: Option<&Path>, cache: &Path) -> Result<Self> {
        match synthetic {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
                let hash = format!("synthetic:{}", hex::encode(Sha256::digest(text.as_bytes())));
                Ok(Self::Synthetic { file: SyntheticFile::parse(&text)?, hash })
            }
            None => Ok(Self::Manifest { manifest: builtin_manifest(), cache: cache.to_path_buf() }),
        }
    }

    /// Hash identifying the data definitions results were produced from.
    pub fn hash(&self) -> String {
        match self {
            Self::Manifest { manifest, .. } => manifest.hash(),
            Self::Synthetic { hash, .. } => hash.clone(),
        }
    }

    /// Fails unless `id` names a configuration this source can provide.
    pub fn check(&self, id: &str) -> Result<DataConfig> {
        let config: DataConfig = id.parse()?;
        match self {
            Self::Manifest { manifest, .. } => {
                manifest.entry(&config)?;
            }
            Self::Synthetic { .. } => {
                self.scene(&config)?;
            }
        }
        Ok(config)
    }

    fn scene(&self, config: &DataConfig) -> Result<&SyntheticScene> {
        let Self::Synthetic { file, .. } = self else { unreachable!("synthetic source") };
        file.scene
            .iter()
            .find(|s| s.config.parse::<DataConfig>().is_ok_and(|c| c == *config))
            .ok_or_else(|| CliError::Invalid(format!("{config} is not defined in the synthetic scene file")))
    }

    pub fn load(&self, id: &str) -> Result<Loaded> {
        let config = self.check(id)?;
        match self {
            Self::Manifest { manifest, cache } => {
                let paths = fetch_assets(manifest, &config, cache)?;
                let data = load_scene(manifest, &config, &paths)?;
                let split = hsi_train::split_for(manifest.entry(&config)?, &data)?;
                Ok(Loaded { config, data, split })
            }
            Self::Synthetic { .. } => {
                let s = self.scene(&config)?;
                let scene = generate_synthetic(&s.spec, s.seed)?;
                let ratio = config.train_ratio.map(|r| r.get()).unwrap_or(1.0);
                let spec = SplitSpec {
                    train_ratio: ratio,
                    val_fraction: s.val_fraction,
                    seed: s.split_seed,
                    scene: config.scene.clone(),
                };
                let split = assign_hrss_split(&scene.mask, &spec)?;
                Ok(Loaded { config, data: SceneData::Scene { cube: scene.cube, mask: scene.mask }, split })
            }
        }
    }
}
