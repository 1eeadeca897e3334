use std::collections::BTreeMap;

use hsi_nn::{BatchNorm, Cache, Layer, Linear, Mode, NnError, Sequential, Tensor, Visitor, VisitorMut, WavelengthConv};
use ndarray::ArrayD;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::spec::{ModelSpec, StemKind};
use crate::{ModelError, Result};

/// Shape information a backbone is built for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildParams {
    /// Channels after preprocessing (bands, PCA components, or 1 for the mean image).
    pub bands: usize,
    /// Nominal patch side; spectral-only models still read a single pixel.
    pub patch: usize,
    /// Wavelength span of a wavelength-parameterised first layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_nm: Option<(f64, f64)>,
}

impl BuildParams {
    pub fn new(bands: usize, patch: usize) -> Self {
        Self { bands, patch, range_nm: None }
    }

    pub fn with_range(mut self, lo: f64, hi: f64) -> Self {
        self.range_nm = Some((lo, hi));
        self
    }
}

/// Feature extractor: optional wavelength stem followed by the body.
pub struct Backbone {
    pub stem: Option<WavelengthConv<f32>>,
    pub body: Sequential<f32>,
    pub feature_dim: usize,
}

/// Batch normalisation followed by a linear classifier.
pub struct Head {
    pub classes: usize,
    /// Band wavelengths of the configuration, bound into the stem on switch.
    pub grid: Option<Vec<f64>>,
    pub bn: BatchNorm<f32>,
    pub fc: Linear<f32>,
}

impl Head {
    pub fn new<R: Rng + ?Sized>(features: usize, classes: usize, grid: Option<Vec<f64>>, rng: &mut R) -> Self {
        Self { classes, grid, bn: BatchNorm::new(features), fc: Linear::new(features, classes, rng) }
    }
}

pub struct BackboneHeadModel {
    spec: ModelSpec,
    params: BuildParams,
    seed: u64,
    backbone: Backbone,
    heads: BTreeMap<String, Head>,
    order: Vec<String>,
    active: Option<String>,
}

struct ModelCache {
    stem: Option<Cache>,
    body: Cache,
    bn: Cache,
    fc: Cache,
    head: String,
}

impl BackboneHeadModel {
    pub fn new(spec: ModelSpec, params: BuildParams, seed: u64, backbone: Backbone) -> Self {
        Self { spec, params, seed, backbone, heads: BTreeMap::new(), order: Vec::new(), active: None }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn build_params(&self) -> &BuildParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.feature_dim
    }

    pub fn stem(&self) -> Option<&WavelengthConv<f32>> {
        self.backbone.stem.as_ref()
    }

    pub fn is_wavelength_based(&self) -> bool {
        self.backbone.stem.is_some()
    }

    /// Per-sample input shape [channels, extent, extent] for the active head.
    pub fn input_shape(&self) -> Vec<usize> {
        let e = self.spec.input_extent(self.params.patch);
        let c = match (&self.backbone.stem, self.active_head()) {
            (Some(s), _) if !s.positions().is_empty() => s.positions().len(),
            _ => self.params.bands,
        };
        vec![c, e, e]
    }

    /// Head ids in attachment order.
    pub fn head_ids(&self) -> &[String] {
        &self.order
    }

    pub fn head(&self, id: &str) -> Option<&Head> {
        self.heads.get(id)
    }

    pub fn active_head(&self) -> Option<&str> {
        self.active.as_deref()
    }

    pub fn attach_head<R: Rng + ?Sized>(
        &mut self,
        id: &str,
        classes: usize,
        grid: Option<&[f64]>,
        rng: &mut R,
    ) -> Result<()> {
        if self.heads.contains_key(id) {
            return Err(ModelError::Head(format!("head {id} already attached")));
        }
        if classes < 2 {
            return Err(ModelError::Head(format!("head {id} needs at least two classes")));
        }
        let grid = self.checked_grid(id, grid)?;
        self.heads.insert(id.to_string(), Head::new(self.backbone.feature_dim, classes, grid, rng));
        self.order.push(id.to_string());
        if self.active.is_none() {
            self.switch_head(id)?;
        }
        Ok(())
    }

    fn checked_grid(&self, id: &str, grid: Option<&[f64]>) -> Result<Option<Vec<f64>>> {
        match (&self.backbone.stem, grid) {
            (Some(stem), Some(g)) => {
                stem.normalise(g).map_err(|e| ModelError::Coverage(format!("{id}: {e}")))?;
                Ok(Some(g.to_vec()))
            }
            (Some(_), None) => Err(ModelError::Head(format!(
                "{} is wavelength based; head {id} needs a wavelength grid",
                self.spec.name
            ))),
            (None, g) => Ok(g.map(<[f64]>::to_vec)),
        }
    }

    /// Routes subsequent passes through head `id` and binds its grid into the stem.
    pub fn switch_head(&mut self, id: &str) -> Result<()> {
        let head = self.heads.get(id).ok_or_else(|| ModelError::Head(format!("no head for {id}")))?;
        if let (Some(stem), Some(grid)) = (&mut self.backbone.stem, &head.grid) {
            if stem.positions().len() != grid.len() || self.active.as_deref() != Some(id) {
                stem.set_grid(grid)?;
            }
        }
        self.active = Some(id.to_string());
        Ok(())
    }

    /// Fresh classifier for `target`; the head's batch normalisation is kept
    /// (from `target` when it was pretrained, else from the first pretraining head)
    /// and every other head is dropped. The backbone is untouched.
    pub fn reinit_head_for_finetune<R: Rng + ?Sized>(
        &mut self,
        target: &str,
        classes: usize,
        grid: Option<&[f64]>,
        rng: &mut R,
    ) -> Result<()> {
        let grid = self.checked_grid(target, grid)?;
        let bn = match self.heads.remove(target) {
            Some(h) => Some(h.bn),
            None => self.order.first().and_then(|first| self.heads.remove(first)).map(|h| h.bn),
        };
        let mut head = Head::new(self.backbone.feature_dim, classes, grid, rng);
        if let Some(bn) = bn {
            head.bn = bn;
        }
        self.heads.clear();
        self.heads.insert(target.to_string(), head);
        self.order = vec![target.to_string()];
        self.active = None;
        self.switch_head(target)
    }

    pub fn param_count(&self) -> usize {
        hsi_nn::param_count(self)
    }

    pub fn backbone_param_count(&self) -> usize {
        let mut n = 0;
        self.visit_backbone(&mut |_, t| {
            if let Tensor::Param(p) = t {
                n += p.len();
            }
        });
        n
    }

    fn visit_backbone(&self, f: &mut Visitor<'_, f32>) {
        if let Some(s) = &self.backbone.stem {
            s.visit("stem", f);
        }
        self.backbone.body.visit("body", f);
    }

    /// SHA-256 over names, shapes and little-endian values of every backbone tensor.
    pub fn backbone_hash(&self) -> String {
        let mut h = Sha256::new();
        self.visit_backbone(&mut |name, t| {
            let v = match t {
                Tensor::Param(p) => &p.value,
                Tensor::Buffer(b) => b,
            };
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((v.ndim() as u64).to_le_bytes());
            for d in v.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for x in v.iter() {
                h.update(x.to_le_bytes());
            }
        });
        hex::encode(h.finalize())
    }

    pub fn backbone_state(&self) -> Vec<(String, ArrayD<f32>)> {
        let mut out = Vec::new();
        self.visit_backbone(&mut |name, t| {
            let v = match t {
                Tensor::Param(p) => p.value.clone(),
                Tensor::Buffer(b) => b.clone(),
            };
            out.push((name.to_string(), v));
        });
        out
    }

    pub(crate) fn body_mut(&mut self) -> &mut Sequential<f32> {
        &mut self.backbone.body
    }

    fn check_input(&self, x: &ArrayD<f32>) -> Result<()> {
        if x.ndim() != 4 {
            return Err(ModelError::Nn(NnError::Shape(format!(
                "model input must be [N, C, H, W], got {:?}",
                x.shape()
            ))));
        }
        let want = self.input_shape();
        if x.shape()[1] != want[0] {
            return Err(ModelError::Nn(NnError::Shape(format!(
                "{} expects {} input channels, got {}",
                self.spec.name,
                want[0],
                x.shape()[1]
            ))));
        }
        Ok(())
    }
}

fn nn(e: ModelError) -> NnError {
    match e {
        ModelError::Nn(e) => e,
        other => NnError::State(other.to_string()),
    }
}

impl Layer<f32> for BackboneHeadModel {
    fn kind(&self) -> &'static str {
        "backbone_head_model"
    }

    fn forward(&mut self, x: ArrayD<f32>, mode: Mode) -> hsi_nn::Result<(ArrayD<f32>, Cache)> {
        self.check_input(&x).map_err(nn)?;
        let id = self.active.clone().ok_or_else(|| NnError::State(format!("{} has no active head", self.spec.name)))?;
        let (x, stem) = match &mut self.backbone.stem {
            Some(s) => {
                let (y, c) = s.forward(x, mode)?;
                (y, Some(c))
            }
            None => (x, None),
        };
        let (f, body) = self.backbone.body.forward(x, mode)?;
        let head = self.heads.get_mut(&id).expect("active head exists");
        let (f, bn) = head.bn.forward(f, mode)?;
        let (y, fc) = head.fc.forward(f, mode)?;
        Ok((y, Box::new(ModelCache { stem, body, bn, fc, head: id })))
    }

    fn backward(&mut self, cache: Cache, grad: ArrayD<f32>) -> hsi_nn::Result<ArrayD<f32>> {
        let c = cache.downcast::<ModelCache>().map_err(|_| NnError::Cache("backbone_head_model"))?;
        let ModelCache { stem, body, bn, fc, head } = *c;
        let h =
            self.heads.get_mut(&head).ok_or_else(|| NnError::State(format!("head {head} vanished between passes")))?;
        let g = h.fc.backward(fc, grad)?;
        let g = h.bn.backward(bn, g)?;
        let g = self.backbone.body.backward(body, g)?;
        match (&mut self.backbone.stem, stem) {
            (Some(s), Some(c)) => s.backward(c, g),
            (None, None) => Ok(g),
            _ => Err(NnError::Cache("backbone_head_model")),
        }
    }

    fn output_shape(&self, input: &[usize]) -> hsi_nn::Result<Vec<usize>> {
        let mut s = input.to_vec();
        if let Some(stem) = &self.backbone.stem {
            s = stem.output_shape(&s)?;
        }
        s = self.backbone.body.output_shape(&s)?;
        let classes = self
            .active
            .as_ref()
            .and_then(|id| self.heads.get(id))
            .map(|h| h.classes)
            .ok_or_else(|| NnError::State("no active head".into()))?;
        if s != [self.backbone.feature_dim] {
            return Err(NnError::Shape(format!("backbone output {s:?}")));
        }
        Ok(vec![classes])
    }

    fn visit(&self, prefix: &str, f: &mut Visitor<'_, f32>) {
        if let Some(s) = &self.backbone.stem {
            s.visit(&hsi_nn::join(prefix, "stem"), f);
        }
        self.backbone.body.visit(&hsi_nn::join(prefix, "body"), f);
        for id in &self.order {
            let h = &self.heads[id];
            let p = hsi_nn::join(prefix, &format!("heads.{id}"));
            h.bn.visit(&hsi_nn::join(&p, "bn"), f);
            h.fc.visit(&hsi_nn::join(&p, "fc"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, f32>) {
        if let Some(s) = &mut self.backbone.stem {
            s.visit_mut(&hsi_nn::join(prefix, "stem"), f);
        }
        self.backbone.body.visit_mut(&hsi_nn::join(prefix, "body"), f);
        for id in &self.order {
            let h = self.heads.get_mut(id).expect("ordered head exists");
            let p = hsi_nn::join(prefix, &format!("heads.{id}"));
            h.bn.visit_mut(&hsi_nn::join(&p, "bn"), f);
            h.fc.visit_mut(&hsi_nn::join(&p, "fc"), f);
        }
    }
}

/// Stem kinds agree with the spec that produced the model.
pub(crate) fn check_stem(spec: &ModelSpec, backbone: &Backbone) -> Result<()> {
    let has = backbone.stem.is_some();
    if has != (spec.stem == StemKind::Wavelength) {
        return Err(ModelError::Incompatible(format!(
            "{}: builder stem does not match declared stem kind {:?}",
            spec.name, spec.stem
        )));
    }
    Ok(())
}
