//! From scene data and a split to preprocessed, model-ready sample sources.

use std::collections::HashSet;
use std::sync::Arc;

use hsi_core::cube::{FittedPreprocess, PreprocessSpec, Preprocessor};
use hsi_core::registry::{ManifestEntry, SceneData, SplitSource};
use hsi_core::sampler::{
    augment, batch_rng, extract_patches, AugmentSpec, PatchSpec, RecordSet, SampleSource, OBJECT_SIZE,
};
use hsi_core::splits::{assign_hrss_split, load_fixed_split, SplitAssignment, SplitSpec, SplitTag, Unit};
use hsi_core::{DataConfig, Recording};
use hsi_models::{BuildParams, ModelSpec};
use ndarray::{Array4, ArrayD, Axis};
use rayon::prelude::*;

use crate::{Result, TrainError};

#[derive(Clone, Debug, PartialEq)]
pub struct PrepareOptions {
    pub preprocess: PreprocessSpec,
    /// Patch geometry for patchwise configurations; `size` is the model's input extent.
    pub patch: PatchSpec,
    /// Side length objectwise recordings are resized to.
    pub object_size: usize,
}

impl PrepareOptions {
    /// Input contract of `spec` with a nominal patch size and training stride.
    pub fn for_model(spec: &ModelSpec, patch_size: usize, train_stride: usize) -> Self {
        let patch = PatchSpec { size: spec.input_extent(patch_size), train_stride, ..PatchSpec::default() };
        Self { preprocess: spec.input, patch, object_size: OBJECT_SIZE }
    }
}

/// One configuration ready for training and evaluation.
pub struct PreparedConfig {
    pub config: Arc<DataConfig>,
    pub classes: usize,
    /// Band wavelengths when preprocessing keeps them.
    pub grid: Option<Vec<f64>>,
    /// Channels after preprocessing.
    pub bands: usize,
    pub train: Arc<dyn SampleSource>,
    pub val: Arc<dyn SampleSource>,
    pub test: Arc<dyn SampleSource>,
    pub preprocess: FittedPreprocess,
    test_units: HashSet<Unit>,
}

impl PreparedConfig {
    pub fn id(&self) -> String {
        self.config.id()
    }

    pub fn source(&self, tag: SplitTag) -> &Arc<dyn SampleSource> {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Val => &self.val,
            _ => &self.test,
        }
    }

    /// Fails if any training or validation sample is also a test sample.
    pub fn check_isolation(&self) -> Result<()> {
        for src in [&self.train, &self.val] {
            if src.split() == SplitTag::Test {
                return Err(TrainError::Leak(format!("{}: test source used for fitting", self.id())));
            }
            for i in 0..src.len() {
                if self.test_units.contains(src.unit(i)) {
                    return Err(TrainError::Leak(format!("{}: {:?} is a test unit", self.id(), src.unit(i))));
                }
            }
        }
        Ok(())
    }
}

/// Split of a manifest configuration: the seeded per-class rule for HRSS
/// scenes, the listed membership otherwise.
pub fn split_for(entry: &ManifestEntry, data: &SceneData) -> Result<SplitAssignment> {
    match (&entry.splits, data) {
        (SplitSource::Hrss { val_fraction, seed }, SceneData::Scene { mask, .. }) => {
            let r = entry
                .config
                .train_ratio
                .ok_or_else(|| TrainError::Invalid(format!("{}: no train ratio", entry.config)))?;
            let spec = SplitSpec {
                train_ratio: r.get(),
                val_fraction: *val_fraction,
                seed: *seed,
                scene: entry.config.scene.clone(),
            };
            Ok(assign_hrss_split(mask, &spec)?)
        }
        (SplitSource::Fixed { .. }, _) => Ok(load_fixed_split(entry)?),
        (SplitSource::Hrss { .. }, SceneData::Objects { .. }) => {
            Err(TrainError::Invalid(format!("{}: per-class pixel splits need a labelled scene", entry.config)))
        }
    }
}

fn non_empty(src: &Arc<dyn SampleSource>, config: &DataConfig) -> Result<()> {
    if src.is_empty() {
        return Err(TrainError::EmptySplit { config: config.id(), split: src.split().as_str() });
    }
    Ok(())
}

/// Fits preprocessing on the training units only and builds the three sample sources.
pub fn prepare(
    config: &DataConfig,
    data: &SceneData,
    assignment: &SplitAssignment,
    opts: &PrepareOptions,
) -> Result<PreparedConfig> {
    assignment.validate()?;
    let cfg = Arc::new(config.clone());
    let mut pre = Preprocessor::new(opts.preprocess);
    type Sources = [Arc<dyn SampleSource>; 3];
    let (classes, grid, bands, sources): (usize, Option<Vec<f64>>, usize, Sources) = match data {
        SceneData::Scene { cube, mask } => {
            pre.fit(&[cube], &[assignment.pixels(SplitTag::Train)])?;
            let grid = cube.grid().map(|g| g.wavelengths().to_vec());
            let cube = Arc::new(pre.apply(cube)?);
            let make = |tag| -> Result<Arc<dyn SampleSource>> {
                Ok(Arc::new(extract_patches(cube.clone(), mask, assignment, tag, &opts.patch, cfg.clone())?))
            };
            let s = [make(SplitTag::Train)?, make(SplitTag::Val)?, make(SplitTag::Test)?];
            (mask.class_count(), grid, cube.bands(), s)
        }
        SceneData::Objects { recordings, classes } => {
            let train_ids: HashSet<&str> = assignment
                .get(SplitTag::Train)
                .iter()
                .filter_map(|u| match u {
                    Unit::Record { id } => Some(id.as_str()),
                    _ => None,
                })
                .collect();
            let fit_on: Vec<&Recording> = recordings.iter().filter(|r| train_ids.contains(r.id.as_str())).collect();
            let cubes: Vec<_> = fit_on.iter().map(|r| &r.cube).collect();
            let pixels: Vec<Vec<(usize, usize)>> = cubes
                .iter()
                .map(|c| {
                    let (w, h, _) = c.dim();
                    (0..w).flat_map(|x| (0..h).map(move |y| (x, y))).collect()
                })
                .collect();
            pre.fit(&cubes, &pixels)?;
            let grid = recordings.first().and_then(|r| r.cube.grid()).map(|g| g.wavelengths().to_vec());
            let processed = recordings
                .iter()
                .map(|r| Ok(Recording { id: r.id.clone(), cube: pre.apply(&r.cube)?, label: r.label }))
                .collect::<Result<Vec<_>>>()?;
            let bands = processed.first().map(|r| r.cube.bands()).unwrap_or(0);
            let make = |tag| -> Result<Arc<dyn SampleSource>> {
                Ok(Arc::new(RecordSet::new(&processed, assignment, tag, classes.len(), opts.object_size, cfg.clone())?))
            };
            let s = [make(SplitTag::Train)?, make(SplitTag::Val)?, make(SplitTag::Test)?];
            (classes.len(), grid, bands, s)
        }
    };
    let [train, val, test] = sources;
    for s in [&train, &val, &test] {
        non_empty(s, config)?;
    }
    let grid = if opts.preprocess.keeps_wavelengths() { grid } else { None };
    let test_units = assignment.get(SplitTag::Test).iter().cloned().collect();
    let prepared = PreparedConfig {
        config: cfg,
        classes,
        grid,
        bands,
        train,
        val,
        test,
        preprocess: pre.state().cloned().expect("fitted above"),
        test_units,
    };
    prepared.check_isolation()?;
    Ok(prepared)
}

/// Augmentation context of one training batch.
#[derive(Clone, Copy, Debug)]
pub struct AugmentAt<'a> {
    pub spec: &'a AugmentSpec,
    pub seed: u64,
    pub epoch: usize,
    pub batch: usize,
}

/// Stacks the samples `idx` of `src` into `[n, C, H, W]`; sample `k` is
/// augmented with the stream of slot `slot0 + k`, independent of thread count.
pub fn gather(
    src: &dyn SampleSource,
    idx: &[usize],
    aug: Option<AugmentAt<'_>>,
    slot0: usize,
) -> (ArrayD<f32>, Vec<usize>) {
    let [c, h, w] = src.sample_shape();
    let tensors: Vec<_> = idx
        .par_iter()
        .enumerate()
        .map(|(k, &i)| {
            let x = src.tensor(i);
            match aug {
                Some(a) if h > 1 || w > 1 => {
                    let mut rng = batch_rng(a.seed, "augment", a.epoch, a.batch, slot0 + k);
                    augment(&x, a.spec, &mut rng).0
                }
                _ => x,
            }
        })
        .collect();
    let mut out = Array4::<f32>::zeros((idx.len(), c, h, w));
    for (mut dst, t) in out.axis_iter_mut(Axis(0)).zip(&tensors) {
        dst.assign(t);
    }
    let labels = idx.iter().map(|&i| src.label(i) as usize).collect();
    (out.into_dyn(), labels)
}

/// Build parameters covering every configuration: channel count of the first,
/// wavelength range spanning all grids.
pub fn build_params(datas: &[&PreparedConfig], patch: usize) -> BuildParams {
    let mut params = BuildParams::new(datas.first().map(|d| d.bands).unwrap_or(0), patch);
    let grids = datas.iter().filter_map(|d| d.grid.as_ref());
    let lo = grids.clone().filter_map(|g| g.first().copied()).fold(f64::INFINITY, f64::min);
    let hi = grids.filter_map(|g| g.last().copied()).fold(f64::NEG_INFINITY, f64::max);
    if lo < hi {
        params = params.with_range(lo, hi);
    }
    params
}
