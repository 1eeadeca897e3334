//! Versioned JSON checkpoints with base64 little-endian f32 tensors.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use hsi_nn::{Layer, WavelengthConvConfig};
use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{BackboneHeadModel, BuildParams};
use crate::registry::ModelRegistry;
use crate::spec::ModelSpec;
use crate::{ModelError, Result};

pub const FORMAT: &str = "hsi-bench-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadRecord {
    pub config: String,
    pub classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    /// Base64 of the values as little-endian f32 in row-major order.
    pub data: String,
}

impl TensorRecord {
    pub fn encode(name: &str, v: &ArrayD<f32>) -> Self {
        let mut bytes = Vec::with_capacity(v.len() * 4);
        for x in v.iter() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        Self { name: name.to_string(), shape: v.shape().to_vec(), data: STANDARD.encode(bytes) }
    }

    pub fn decode(&self) -> Result<ArrayD<f32>> {
        let bytes =
            STANDARD.decode(&self.data).map_err(|e| ModelError::Checkpoint(format!("tensor {}: {e}", self.name)))?;
        let n: usize = self.shape.iter().product();
        if bytes.len() != n * 4 {
            return Err(ModelError::Checkpoint(format!(
                "tensor {}: {} bytes for shape {:?}",
                self.name,
                bytes.len(),
                self.shape
            )));
        }
        let vals = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        ArrayD::from_shape_vec(IxDyn(&self.shape), vals).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: String,
    pub spec: ModelSpec,
    pub build: BuildParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelength_conv: Option<WavelengthConvConfig>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
    pub heads: Vec<HeadRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<String>,
    pub tensors: Vec<TensorRecord>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn capture(model: &BackboneHeadModel) -> Self {
        let heads = model
            .head_ids()
            .iter()
            .map(|id| {
                let h = model.head(id).expect("listed head exists");
                HeadRecord { config: id.clone(), classes: h.classes, grid: h.grid.clone() }
            })
            .collect();
        let tensors =
            hsi_nn::state_dict(model as &dyn Layer<f32>).iter().map(|(n, v)| TensorRecord::encode(n, v)).collect();
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            model: model.name().to_string(),
            spec: model.spec().clone(),
            build: model.build_params().clone(),
            wavelength_conv: model.stem().map(|s| s.config().clone()),
            seed: model.seed(),
            manifest_hash: None,
            heads,
            active: model.active_head().map(str::to_string),
            tensors,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_manifest_hash(mut self, hash: impl Into<String>) -> Self {
        self.manifest_hash = Some(hash.into());
        self
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if c.format != FORMAT {
            return Err(ModelError::Checkpoint(format!("not a checkpoint: format {:?}", c.format)));
        }
        if c.version > VERSION {
            return Err(ModelError::Checkpoint(format!(
                "checkpoint version {} is newer than supported version {VERSION}",
                c.version
            )));
        }
        Ok(c)
    }

    /// Writes through a temporary file so a crash never leaves a truncated checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Rebuilds the model through `registry` and loads every stored tensor.
    pub fn restore(&self, registry: &ModelRegistry) -> Result<BackboneHeadModel> {
        let mut model = registry.build_with_spec(self.spec.clone(), &self.build, self.seed)?;
        if model.stem().map(|s| s.config().clone()) != self.wavelength_conv {
            return Err(ModelError::Checkpoint(format!(
                "{}: wavelength layer configuration differs from the stored one",
                self.model
            )));
        }
        // head weights are overwritten below
        let mut scratch = ChaCha8Rng::seed_from_u64(0);
        for h in &self.heads {
            model.attach_head(&h.config, h.classes, h.grid.as_deref(), &mut scratch)?;
        }
        let state = self.tensors.iter().map(|t| Ok((t.name.clone(), t.decode()?))).collect::<Result<Vec<_>>>()?;
        hsi_nn::load_state(&mut model as &mut dyn Layer<f32>, &state)?;
        if let Some(a) = &self.active {
            model.switch_head(a)?;
        }
        Ok(model)
    }
}
