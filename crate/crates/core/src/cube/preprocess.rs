use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::pca::{fit_pca, PcaModel};
use super::{HyperspectralCube, SpectralAxis};
use crate::error::{Error, Result};

/// Per-band mean and standard deviation of training pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    /// Population standard deviation; exactly-zero variance is stored as `1.0`.
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn bands(&self) -> usize {
        self.mean.len()
    }

    /// Stats that leave values unchanged.
    pub fn identity(bands: usize) -> Self {
        Self { mean: vec![0.0; bands], std: vec![1.0; bands] }
    }
}

/// Welford accumulation over the listed pixels of every cube.
///
/// `pixels[i]` holds the training pixel coordinates of `cubes[i]`.
pub fn compute_channel_stats(cubes: &[&HyperspectralCube], pixels: &[Vec<(usize, usize)>]) -> Result<ChannelStats> {
    if cubes.is_empty() || cubes.len() != pixels.len() {
        return Err(Error::NoTrainingPixels);
    }
    let bands = cubes[0].bands();
    if cubes.iter().any(|c| c.bands() != bands) {
        return Err(Error::Preprocess("cubes disagree on band count".into()));
    }
    if pixels.iter().any(Vec::is_empty) {
        return Err(Error::NoTrainingPixels);
    }
    let mut count = 0u64;
    let mut mean = vec![0.0f64; bands];
    let mut m2 = vec![0.0f64; bands];
    for (cube, px) in cubes.iter().zip(pixels) {
        let (w, h, _) = cube.dim();
        for &(x, y) in px {
            if x >= w || y >= h {
                return Err(Error::Preprocess(format!("pixel ({x}, {y}) outside {w}x{h} cube")));
            }
            count += 1;
            let spectrum = cube.spectrum(x, y);
            for (b, &v) in spectrum.iter().enumerate() {
                let v = v as f64;
                let delta = v - mean[b];
                mean[b] += delta / count as f64;
                m2[b] += delta * (v - mean[b]);
            }
        }
    }
    let std = m2
        .iter()
        .map(|&s| {
            let var = s / count as f64;
            if var == 0.0 {
                1.0
            } else {
                var.sqrt()
            }
        })
        .collect();
    Ok(ChannelStats { mean, std })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessMode {
    /// Standardized bands.
    Raw,
    /// Standardized bands projected on the leading principal components.
    Pca,
    /// One band: mean of the standardized bands.
    SpectralMean,
    /// Standardized spectrum of the central pixel only.
    CenterPixel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub mode: PreprocessMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
}

impl PreprocessSpec {
    pub const RAW: Self = Self { mode: PreprocessMode::Raw, components: None };
    pub const SPECTRAL_MEAN: Self = Self { mode: PreprocessMode::SpectralMean, components: None };
    pub const CENTER_PIXEL: Self = Self { mode: PreprocessMode::CenterPixel, components: None };

    pub fn pca(components: usize) -> Self {
        Self { mode: PreprocessMode::Pca, components: Some(components) }
    }

    /// Check the spec against an input of `bands` bands.
    pub fn validate(&self, bands: usize) -> Result<()> {
        match (self.mode, self.components) {
            (PreprocessMode::Pca, None) | (PreprocessMode::Pca, Some(0)) => {
                Err(Error::Preprocess("pca requires a positive component count".into()))
            }
            (PreprocessMode::Pca, Some(k)) if k > bands => {
                Err(Error::Preprocess(format!("{k} components requested but the cube has {bands} bands")))
            }
            (PreprocessMode::Pca, _) => Ok(()),
            (_, Some(_)) => Err(Error::Preprocess("components only apply to pca".into())),
            _ => Ok(()),
        }
    }

    /// Band count after preprocessing an input with `bands` bands.
    pub fn output_bands(&self, bands: usize) -> usize {
        match self.mode {
            PreprocessMode::Raw | PreprocessMode::CenterPixel => bands,
            PreprocessMode::Pca => self.components.unwrap_or(bands),
            PreprocessMode::SpectralMean => 1,
        }
    }

    /// Whether the output keeps the wavelength meaning of each band.
    pub fn keeps_wavelengths(&self) -> bool {
        matches!(self.mode, PreprocessMode::Raw | PreprocessMode::CenterPixel)
    }
}

/// State fitted on training pixels only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedPreprocess {
    pub stats: ChannelStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca: Option<PcaModel>,
}

/// Fit/apply wrapper around a [`PreprocessSpec`].
#[derive(Clone, Debug)]
pub struct Preprocessor {
    spec: PreprocessSpec,
    fitted: Option<FittedPreprocess>,
}

impl Preprocessor {
    pub fn new(spec: PreprocessSpec) -> Self {
        Self { spec, fitted: None }
    }

    pub fn with_state(spec: PreprocessSpec, state: FittedPreprocess) -> Result<Self> {
        spec.validate(state.stats.bands())?;
        if spec.mode == PreprocessMode::Pca && state.pca.is_none() {
            return Err(Error::Preprocess("pca spec without a fitted basis".into()));
        }
        Ok(Self { spec, fitted: Some(state) })
    }

    pub fn spec(&self) -> &PreprocessSpec {
        &self.spec
    }

    pub fn state(&self) -> Option<&FittedPreprocess> {
        self.fitted.as_ref()
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted.is_some()
    }

    /// Fit channel statistics (and the PCA basis, if requested) on training pixels.
    pub fn fit(&mut self, cubes: &[&HyperspectralCube], train_pixels: &[Vec<(usize, usize)>]) -> Result<()> {
        let bands = cubes.first().map(|c| c.bands()).ok_or(Error::NoTrainingPixels)?;
        self.spec.validate(bands)?;
        let stats = compute_channel_stats(cubes, train_pixels)?;
        let pca = if self.spec.mode == PreprocessMode::Pca {
            let k = self.spec.components.expect("validated");
            let n: usize = train_pixels.iter().map(Vec::len).sum();
            let mut m = Array2::<f64>::zeros((n, bands));
            let mut row = 0;
            for (cube, px) in cubes.iter().zip(train_pixels) {
                for &(x, y) in px {
                    for (b, &v) in cube.spectrum(x, y).iter().enumerate() {
                        m[[row, b]] = (v as f64 - stats.mean[b]) / stats.std[b];
                    }
                    row += 1;
                }
            }
            Some(fit_pca(m.view(), k)?)
        } else {
            None
        };
        self.fitted = Some(FittedPreprocess { stats, pca });
        Ok(())
    }

    pub fn apply(&self, cube: &HyperspectralCube) -> Result<HyperspectralCube> {
        let state =
            self.fitted.as_ref().ok_or_else(|| Error::Preprocess("preprocessing state has not been fitted".into()))?;
        let bands = cube.bands();
        self.spec.validate(bands)?;
        if state.stats.bands() != bands {
            return Err(Error::Preprocess(format!(
                "state fitted on {} bands applied to a {bands}-band cube",
                state.stats.bands()
            )));
        }
        let standardized = standardize(cube.data(), &state.stats);
        match self.spec.mode {
            PreprocessMode::Raw => HyperspectralCube::with_axis(standardized, cube.axis().clone()),
            PreprocessMode::CenterPixel => {
                let (w, h, _) = cube.dim();
                let center = standardized.slice(ndarray::s![w / 2..w / 2 + 1, h / 2..h / 2 + 1, ..]).to_owned();
                HyperspectralCube::with_axis(center, cube.axis().clone())
            }
            PreprocessMode::SpectralMean => {
                let mean = standardized.mean_axis(Axis(2)).expect("bands >= 1");
                HyperspectralCube::with_axis(
                    mean.insert_axis(Axis(2)),
                    SpectralAxis::Derived { label: "spectral_mean".into(), len: 1 },
                )
            }
            PreprocessMode::Pca => {
                let pca = state.pca.as_ref().ok_or_else(|| Error::Preprocess("pca basis missing".into()))?;
                let (w, h, _) = cube.dim();
                let k = pca.components();
                let flat = standardized.into_shape_with_order((w * h, bands)).expect("contiguous").mapv(f64::from);
                let centered = &flat - &pca.mean.view().insert_axis(Axis(0));
                let scores = centered.dot(&pca.basis).mapv(|v| v as f32);
                let data = scores.into_shape_with_order((w, h, k)).expect("shape");
                HyperspectralCube::with_axis(data, SpectralAxis::Derived { label: format!("pca{k}"), len: k })
            }
        }
    }
}

fn standardize(data: &Array3<f32>, stats: &ChannelStats) -> Array3<f32> {
    let mut out = data.to_owned();
    for mut spectrum in out.lanes_mut(Axis(2)) {
        for (b, v) in spectrum.iter_mut().enumerate() {
            *v = ((*v as f64 - stats.mean[b]) / stats.std[b]) as f32;
        }
    }
    out
}
