#![allow(dead_code)]

use hsi_core::cube::PreprocessSpec;
use hsi_core::registry::SceneData;
use hsi_core::sampler::PatchSpec;
use hsi_core::splits::{assign_hrss_split, SplitSpec};
use hsi_core::synthetic::{generate_synthetic, SyntheticSpec};
use hsi_core::DataConfig;
use hsi_models::{BackboneHeadModel, ModelRegistry};
use hsi_train::{build_params, prepare, PrepareOptions, PreparedConfig, TrainConfig};

pub struct Scene {
    pub name: String,
    pub bands: usize,
    pub range: (f64, f64),
    pub side: usize,
    pub classes: usize,
    pub signature_seed: u64,
    pub margin: f64,
    pub noise: f64,
    pub blobs: usize,
}

impl Scene {
    pub fn new(name: &str, bands: usize) -> Self {
        Self {
            name: name.into(),
            bands,
            range: (450.0, 950.0),
            side: 12,
            classes: 3,
            signature_seed: 0,
            margin: 0.0,
            noise: 0.05,
            blobs: 2,
        }
    }

    pub fn data(&self, seed: u64) -> SceneData {
        let mut spec = SyntheticSpec::patchwise(self.side, self.side, self.bands, self.classes);
        spec.range_nm = self.range;
        spec.spectral_signature_seed = self.signature_seed;
        spec.blobs_per_class = self.blobs;
        spec.boundary_margin = self.margin;
        spec.noise_sigma = self.noise;
        let s = generate_synthetic(&spec, seed).unwrap();
        SceneData::Scene { cube: s.cube, mask: s.mask }
    }

    pub fn prepared(&self, ratio: f64, preprocess: PreprocessSpec, patch: usize) -> PreparedConfig {
        let config = DataConfig::hrss(&self.name, "synthetic", ratio).unwrap();
        let data = self.data(1);
        let SceneData::Scene { mask, .. } = &data else { unreachable!() };
        let split = assign_hrss_split(mask, &SplitSpec::new(&self.name, ratio, 0)).unwrap();
        let opts =
            PrepareOptions { preprocess, patch: PatchSpec { size: patch, ..PatchSpec::default() }, object_size: 8 };
        prepare(&config, &data, &split, &opts).unwrap()
    }
}

/// Three-class spectral set for spectral-only models.
pub fn spectral(name: &str) -> PreparedConfig {
    Scene::new(name, 16).prepared(0.3, PreprocessSpec::RAW, 1)
}

pub fn quick(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 16, patience: 100, augment: None, ..TrainConfig::default() }
}

pub fn model(name: &str, datas: &[&PreparedConfig], patch: usize, seed: u64) -> BackboneHeadModel {
    ModelRegistry::with_builtins().build(name, &build_params(datas, patch), seed).unwrap()
}
