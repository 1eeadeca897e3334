//! Cubes, wavelength grids, label masks and benchmark configurations.
//!
//! A [`HyperspectralCube`] is stored as an `(x, y, λ)` array so that each
//! pixel spectrum is contiguous in memory.

mod config;
mod pca;
mod preprocess;

pub use config::{DataConfig, DatasetId, LabelTarget, TaskKind, TrainRatio};
pub use pca::{fit_pca, PcaModel};
pub use preprocess::{
    compute_channel_stats, ChannelStats, FittedPreprocess, PreprocessMode, PreprocessSpec, Preprocessor,
};

use ndarray::{Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Band-center wavelengths (nm) of one recording, tied to the camera that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavelengthGrid {
    wavelengths_nm: Vec<f64>,
    camera_id: String,
}

impl WavelengthGrid {
    pub fn new(wavelengths_nm: Vec<f64>, camera_id: impl Into<String>) -> Result<Self> {
        if wavelengths_nm.is_empty() {
            return Err(Error::InvalidGrid("grid must contain at least one band".into()));
        }
        if let Some(bad) = wavelengths_nm.iter().find(|w| !w.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite wavelength {bad}")));
        }
        if let Some(i) = wavelengths_nm.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "wavelengths not strictly increasing at band {}: {} -> {}",
                i + 1,
                wavelengths_nm[i],
                wavelengths_nm[i + 1]
            )));
        }
        Ok(Self { wavelengths_nm, camera_id: camera_id.into() })
    }

    /// `count` band centers spaced evenly over `[min_nm, max_nm]` (endpoints included).
    pub fn linear(min_nm: f64, max_nm: f64, count: usize, camera_id: impl Into<String>) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidGrid("grid must contain at least one band".into()));
        }
        if count > 1 && max_nm <= min_nm {
            return Err(Error::InvalidGrid(format!("empty range {min_nm}..{max_nm}")));
        }
        let step = if count > 1 { (max_nm - min_nm) / (count - 1) as f64 } else { 0.0 };
        let wl = (0..count).map(|i| min_nm + step * i as f64).collect();
        Self::new(wl, camera_id)
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths_nm
    }

    pub fn camera_id(&self) -> &str {
        &self.camera_id
    }

    pub fn len(&self) -> usize {
        self.wavelengths_nm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wavelengths_nm.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.wavelengths_nm[0]
    }

    pub fn max(&self) -> f64 {
        *self.wavelengths_nm.last().unwrap()
    }

    /// Keep only the bands whose index is not listed in `removed` (0-based).
    pub fn without_bands(&self, removed: &[usize]) -> Result<Self> {
        let wl =
            self.wavelengths_nm.iter().enumerate().filter(|(i, _)| !removed.contains(i)).map(|(_, w)| *w).collect();
        Self::new(wl, self.camera_id.clone())
    }

    /// Wavelengths outside `[lo, hi]`.
    pub fn outside(&self, lo: f64, hi: f64) -> Vec<f64> {
        self.wavelengths_nm.iter().copied().filter(|w| *w < lo || *w > hi).collect()
    }
}

/// What the third cube axis means once preprocessing has run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SpectralAxis {
    Wavelengths(WavelengthGrid),
    /// Bands that no longer correspond to wavelengths (PCA components, spectral mean).
    Derived {
        label: String,
        len: usize,
    },
}

impl SpectralAxis {
    pub fn len(&self) -> usize {
        match self {
            SpectralAxis::Wavelengths(g) => g.len(),
            SpectralAxis::Derived { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub struct HyperspectralCube {
    data: Array3<f32>,
    axis: SpectralAxis,
}

impl HyperspectralCube {
    pub fn new(data: Array3<f32>, grid: WavelengthGrid) -> Result<Self> {
        Self::with_axis(data, SpectralAxis::Wavelengths(grid))
    }

    pub fn with_axis(data: Array3<f32>, axis: SpectralAxis) -> Result<Self> {
        let (x, y, bands) = data.dim();
        if x == 0 || y == 0 {
            return Err(Error::InvalidCube(format!("empty spatial extent {x}x{y}")));
        }
        if bands != axis.len() {
            return Err(Error::InvalidCube(format!("cube has {bands} bands but its spectral axis has {}", axis.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCube("cube contains NaN or Inf".into()));
        }
        Ok(Self { data, axis })
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    pub fn axis(&self) -> &SpectralAxis {
        &self.axis
    }

    /// The wavelength grid, if the bands still correspond to wavelengths.
    pub fn grid(&self) -> Option<&WavelengthGrid> {
        match &self.axis {
            SpectralAxis::Wavelengths(g) => Some(g),
            SpectralAxis::Derived { .. } => None,
        }
    }

    /// `(x, y, bands)`
    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn bands(&self) -> usize {
        self.data.dim().2
    }

    pub fn spectrum(&self, x: usize, y: usize) -> ArrayView1<'_, f32> {
        self.data.slice(ndarray::s![x, y, ..])
    }
}

/// One whole-object recording with its label (objectwise tasks).
#[derive(Clone, Debug)]
pub struct Recording {
    pub id: String,
    pub cube: HyperspectralCube,
    pub label: u16,
}

/// Per-pixel class indices aligned with the cube's `(x, y)` plane.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMask {
    labels: Array2<u16>,
    class_catalog: Vec<String>,
    ignore_value: u16,
}

impl LabelMask {
    pub const DEFAULT_IGNORE: u16 = u16::MAX;

    pub fn new(labels: Array2<u16>, class_catalog: Vec<String>, ignore_value: u16) -> Result<Self> {
        let n = class_catalog.len();
        if n == 0 {
            return Err(Error::InvalidMask("empty class catalog".into()));
        }
        if (ignore_value as usize) < n {
            return Err(Error::InvalidMask(format!("ignore value {ignore_value} collides with a class index")));
        }
        let mut seen = vec![0usize; n];
        for &v in labels.iter() {
            if v == ignore_value {
                continue;
            }
            if v as usize >= n {
                return Err(Error::InvalidMask(format!("label {v} outside catalog of {n} classes")));
            }
            seen[v as usize] += 1;
        }
        if let Some(c) = seen.iter().position(|&s| s == 0) {
            return Err(Error::InvalidMask(format!("class {c} ({}) has no labeled pixel", class_catalog[c])));
        }
        Ok(Self { labels, class_catalog, ignore_value })
    }

    /// Build from a map where `0` means unlabeled and `k >= 1` means class `k - 1`,
    /// the convention of the HRSS ground-truth files.
    pub fn from_one_based(raw: &Array2<u16>, class_catalog: Vec<String>) -> Result<Self> {
        let labels = raw.mapv(|v| if v == 0 { Self::DEFAULT_IGNORE } else { v - 1 });
        Self::new(labels, class_catalog, Self::DEFAULT_IGNORE)
    }

    pub fn labels(&self) -> &Array2<u16> {
        &self.labels
    }

    pub fn class_catalog(&self) -> &[String] {
        &self.class_catalog
    }

    pub fn class_count(&self) -> usize {
        self.class_catalog.len()
    }

    pub fn ignore_value(&self) -> u16 {
        self.ignore_value
    }

    pub fn dim(&self) -> (usize, usize) {
        self.labels.dim()
    }

    pub fn get(&self, x: usize, y: usize) -> Option<u16> {
        let v = self.labels[[x, y]];
        (v != self.ignore_value).then_some(v)
    }

    /// Labeled pixels of every class, each list in row-major scan order.
    pub fn pixels_by_class(&self) -> Vec<Vec<(usize, usize)>> {
        let mut out = vec![Vec::new(); self.class_count()];
        for ((x, y), &v) in self.labels.indexed_iter() {
            if v != self.ignore_value {
                out[v as usize].push((x, y));
            }
        }
        out
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.pixels_by_class().iter().map(Vec::len).collect()
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&v| v != self.ignore_value).count()
    }
}
