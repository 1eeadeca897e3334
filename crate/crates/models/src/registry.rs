use std::collections::BTreeMap;
use std::sync::Arc;

use hsi_core::cube::{PreprocessMode, PreprocessSpec};
use hsi_core::rng::{key_u64, keyed_rng};
use rand_chacha::ChaCha8Rng;

use crate::model::{check_stem, Backbone, BackboneHeadModel, BuildParams};
use crate::spec::{plugin_slots, zoo_specs, ModelSpec};
use crate::{zoo, ModelError, Result};

pub type BuildFn = Arc<dyn Fn(&BuildParams, &mut ChaCha8Rng) -> Result<Backbone> + Send + Sync>;

struct Entry {
    spec: ModelSpec,
    builder: Option<BuildFn>,
}

/// Name to (spec, builder) table. Plugin slots are listed with their input
/// contract but need an implementation registered before they can be built.
pub struct ModelRegistry {
    entries: BTreeMap<String, Entry>,
    order: Vec<String>,
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new(), order: Vec::new() }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        let builders: BTreeMap<_, _> = zoo::builders().into_iter().collect();
        for spec in zoo_specs() {
            let f = builders[spec.name.as_str()];
            r.insert(spec, Some(Arc::new(f)));
        }
        for spec in plugin_slots() {
            r.insert(spec, None);
        }
        r
    }

    fn insert(&mut self, spec: ModelSpec, builder: Option<BuildFn>) {
        if !self.entries.contains_key(&spec.name) {
            self.order.push(spec.name.clone());
        }
        self.entries.insert(spec.name.clone(), Entry { spec, builder });
    }

    /// Adds or replaces a model, including filling a plugin slot.
    pub fn register(&mut self, spec: ModelSpec, builder: BuildFn) {
        self.insert(spec, Some(builder));
    }

    pub fn names(&self) -> &[String] {
        &self.order
    }

    pub fn implemented(&self) -> Vec<&str> {
        self.order.iter().filter(|n| self.entries[*n].builder.is_some()).map(String::as_str).collect()
    }

    pub fn spec(&self, name: &str) -> Result<&ModelSpec> {
        self.entries.get(name).map(|e| &e.spec).ok_or_else(|| ModelError::UnknownModel(name.to_string()))
    }

    /// Builds `name` with its declared input; `params.bands` is the channel count after preprocessing.
    pub fn build(&self, name: &str, params: &BuildParams, seed: u64) -> Result<BackboneHeadModel> {
        let spec = self.spec(name)?.clone();
        self.build_with_spec(spec, params, seed)
    }

    pub fn build_with_spec(&self, spec: ModelSpec, params: &BuildParams, seed: u64) -> Result<BackboneHeadModel> {
        let entry = self.entries.get(&spec.name).ok_or_else(|| ModelError::UnknownModel(spec.name.clone()))?;
        let builder = entry.builder.as_ref().ok_or_else(|| {
            ModelError::NotImplemented(format!(
                "{} is a plugin slot; register an implementation before building it",
                spec.name
            ))
        })?;
        spec.check_input(&spec.input)?;
        check_channels(&spec.input, params.bands, &spec.name)?;
        let mut rng = keyed_rng("model-init", &[seed, key_u64(&spec.name, &[])]);
        let backbone = builder(params, &mut rng)?;
        check_stem(&spec, &backbone)?;
        Ok(BackboneHeadModel::new(spec, params.clone(), seed, backbone))
    }
}

fn check_channels(input: &PreprocessSpec, bands: usize, name: &str) -> Result<()> {
    let want = match input.mode {
        PreprocessMode::SpectralMean | PreprocessMode::Pca => Some(input.output_bands(bands)),
        _ => None,
    };
    match want {
        Some(w) if w != bands => Err(ModelError::Incompatible(format!(
            "{name} expects {w} channels after {:?} preprocessing, got {bands}",
            input.mode
        ))),
        _ if bands == 0 => Err(ModelError::Incompatible(format!("{name}: zero input channels"))),
        _ => Ok(()),
    }
}
