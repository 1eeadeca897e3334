//! Synthetic scenes and object recordings with known class spectra.
//!
//! Class signatures are defined over absolute wavelength, so two specs with the
//! same `spectral_signature_seed` and different camera grids share class spectra.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cube::{HyperspectralCube, LabelMask, Recording, TaskKind, WavelengthGrid};
use crate::error::{Error, Result};
use crate::rng::keyed_rng;

const GAUSSIANS_PER_SIGNATURE: usize = 3;
const MAX_SIGNATURE_ATTEMPTS: u64 = 1000;

fn default_range() -> (f64, f64) {
    (400.0, 1000.0)
}
fn default_camera() -> String {
    "synthetic".into()
}
fn default_blobs() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub x: usize,
    pub y: usize,
    pub bands: usize,
    pub class_count: usize,
    pub spectral_signature_seed: u64,
    pub noise_sigma: f64,
    pub task_kind: TaskKind,
    /// Grid range of the simulated camera.
    #[serde(default = "default_range")]
    pub range_nm: (f64, f64),
    #[serde(default = "default_camera")]
    pub camera_id: String,
    /// Domain over which class signatures are drawn; defaults to 400–1000 nm.
    #[serde(default = "default_range")]
    pub signature_range_nm: (f64, f64),
    /// Voronoi cells per class in patchwise scenes.
    #[serde(default = "default_blobs")]
    pub blobs_per_class: usize,
    /// Patch size the scene must accommodate (patchwise only).
    #[serde(default)]
    pub patch_size: Option<usize>,
    /// Pixels whose two nearest cell seeds are closer than this (in pixels) stay unlabeled.
    #[serde(default)]
    pub boundary_margin: f64,
}

impl SyntheticSpec {
    pub fn patchwise(x: usize, y: usize, bands: usize, class_count: usize) -> Self {
        Self {
            x,
            y,
            bands,
            class_count,
            spectral_signature_seed: 0,
            noise_sigma: 0.05,
            task_kind: TaskKind::Patchwise,
            range_nm: default_range(),
            camera_id: default_camera(),
            signature_range_nm: default_range(),
            blobs_per_class: default_blobs(),
            patch_size: None,
            boundary_margin: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.class_count < 2 {
            return bad(format!("class_count must be >= 2, got {}", self.class_count));
        }
        if self.x == 0 || self.y == 0 || self.bands == 0 {
            return bad("synthetic dimensions must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        if self.range_nm.0 >= self.range_nm.1 || self.signature_range_nm.0 >= self.signature_range_nm.1 {
            return bad("wavelength ranges must satisfy min < max".into());
        }
        if self.task_kind == TaskKind::Patchwise {
            if self.blobs_per_class == 0 {
                return bad("blobs_per_class must be >= 1".into());
            }
            if self.x * self.y < self.class_count * self.blobs_per_class {
                return bad("scene too small for the requested cells".into());
            }
            if let Some(p) = self.patch_size {
                if self.x < p || self.y < p {
                    return bad(format!("scene {}x{} smaller than patch size {p}", self.x, self.y));
                }
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<WavelengthGrid> {
        WavelengthGrid::linear(self.range_nm.0, self.range_nm.1, self.bands, self.camera_id.clone())
    }
}

/// A generated patchwise scene.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub cube: HyperspectralCube,
    pub mask: LabelMask,
    pub grid: WavelengthGrid,
}

#[derive(Clone, Debug)]
struct Signature {
    base: f64,
    peaks: [(f64, f64, f64); GAUSSIANS_PER_SIGNATURE],
}

impl Signature {
    fn draw(seed: u64, class: usize, attempt: u64, domain: (f64, f64)) -> Self {
        let mut rng = keyed_rng("synthetic-signature", &[seed, class as u64, attempt]);
        let span = domain.1 - domain.0;
        let base = rng.random_range(0.05..0.2);
        let peaks = std::array::from_fn(|_| {
            let center = domain.0 + rng.random_range(0.0..1.0) * span;
            let width = rng.random_range(0.04..0.2) * span;
            let amp = rng.random_range(0.2..1.0);
            (center, width, amp)
        });
        Self { base, peaks }
    }

    fn eval(&self, nm: f64) -> f64 {
        self.base + self.peaks.iter().map(|&(c, w, a)| a * (-(nm - c).powi(2) / (2.0 * w * w)).exp()).sum::<f64>()
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Noise-free class spectra sampled on `grid`, with pairwise L2 distance above
/// `max(5 * noise_sigma, 1e-3)` guaranteed by rejection.
pub fn class_signatures(spec: &SyntheticSpec, grid: &WavelengthGrid) -> Result<Vec<Vec<f64>>> {
    let threshold = (5.0 * spec.noise_sigma).max(1e-3);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(spec.class_count);
    for c in 0..spec.class_count {
        let mut accepted = None;
        for attempt in 0..MAX_SIGNATURE_ATTEMPTS {
            let s = Signature::draw(spec.spectral_signature_seed, c, attempt, spec.signature_range_nm);
            let v: Vec<f64> = grid.wavelengths().iter().map(|&nm| s.eval(nm)).collect();
            if out.iter().all(|o| l2(o, &v) > threshold) {
                accepted = Some(v);
                break;
            }
        }
        out.push(accepted.ok_or_else(|| {
            Error::InvalidConfig(format!("could not separate class {c} by {threshold}; lower noise_sigma or add bands"))
        })?);
    }
    Ok(out)
}

/// Voronoi-blob label layout: `(owner class of every pixel, labeled flag)`.
fn blob_layout(spec: &SyntheticSpec, seed: u64) -> (Array2<u16>, Array2<bool>) {
    let mut rng = keyed_rng("synthetic-layout", &[seed, spec.spectral_signature_seed]);
    let n_cells = spec.class_count * spec.blobs_per_class;
    let mut seeds: Vec<(usize, usize)> = Vec::with_capacity(n_cells);
    while seeds.len() < n_cells {
        let p = (rng.random_range(0..spec.x), rng.random_range(0..spec.y));
        if !seeds.contains(&p) {
            seeds.push(p);
        }
    }
    let mut owner = Array2::zeros((spec.x, spec.y));
    let mut labeled = Array2::from_elem((spec.x, spec.y), true);
    for ((x, y), o) in owner.indexed_iter_mut() {
        let mut best = (f64::INFINITY, 0usize);
        let mut second = f64::INFINITY;
        for (i, &(sx, sy)) in seeds.iter().enumerate() {
            let d = ((x as f64 - sx as f64).powi(2) + (y as f64 - sy as f64).powi(2)).sqrt();
            if d < best.0 {
                second = best.0;
                best = (d, i);
            } else if d < second {
                second = d;
            }
        }
        *o = (best.1 % spec.class_count) as u16;
        if best.0 > 0.0 && second - best.0 < spec.boundary_margin {
            labeled[[x, y]] = false;
        }
    }
    (owner, labeled)
}

fn noisy(signature: &[f64], noise: &Normal<f64>, rng: &mut impl Rng) -> impl Iterator<Item = f32> {
    signature.iter().map(|&v| (v + noise.sample(rng)).max(0.0) as f32).collect::<Vec<_>>().into_iter()
}

/// Generate a patchwise scene. Deterministic in `(spec, seed)`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticScene> {
    spec.validate()?;
    if spec.task_kind != TaskKind::Patchwise {
        return Err(Error::InvalidConfig("generate_synthetic builds patchwise scenes; use generate_recordings".into()));
    }
    let grid = spec.grid()?;
    let sigs = class_signatures(spec, &grid)?;
    let (owner, labeled) = blob_layout(spec, seed);
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    let mut rng = keyed_rng("synthetic-noise", &[seed, spec.spectral_signature_seed]);
    let mut data = Array3::zeros((spec.x, spec.y, spec.bands));
    for x in 0..spec.x {
        for y in 0..spec.y {
            let c = owner[[x, y]] as usize;
            for (b, v) in noisy(&sigs[c], &noise, &mut rng).enumerate() {
                data[[x, y, b]] = v;
            }
        }
    }
    let labels =
        ndarray::Zip::from(&owner).and(&labeled).map_collect(|&o, &l| if l { o } else { LabelMask::DEFAULT_IGNORE });
    let catalog = (0..spec.class_count).map(|c| format!("class_{c}")).collect();
    let mask = LabelMask::new(labels, catalog, LabelMask::DEFAULT_IGNORE)?;
    let cube = HyperspectralCube::new(data, grid.clone())?;
    Ok(SyntheticScene { cube, mask, grid })
}

/// Generate `per_class` objectwise recordings per class: a centered ellipse with
/// the class spectrum on a background spectrum shared by all classes.
pub fn generate_recordings(spec: &SyntheticSpec, seed: u64, per_class: usize) -> Result<Vec<Recording>> {
    spec.validate()?;
    let grid = spec.grid()?;
    let sigs = class_signatures(spec, &grid)?;
    let background: Vec<f64> = grid.wavelengths().iter().map(|_| 0.02).collect();
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    let mut out = Vec::with_capacity(per_class * spec.class_count);
    for (c, sig) in sigs.iter().enumerate() {
        for i in 0..per_class {
            let mut rng = keyed_rng("synthetic-object", &[seed, spec.spectral_signature_seed, c as u64, i as u64]);
            let rx = rng.random_range(0.25..0.45) * spec.x as f64;
            let ry = rng.random_range(0.25..0.45) * spec.y as f64;
            let (cx, cy) = ((spec.x as f64 - 1.0) / 2.0, (spec.y as f64 - 1.0) / 2.0);
            let mut data = Array3::zeros((spec.x, spec.y, spec.bands));
            for x in 0..spec.x {
                for y in 0..spec.y {
                    let inside =
                        ((x as f64 - cx) / rx.max(0.5)).powi(2) + ((y as f64 - cy) / ry.max(0.5)).powi(2) <= 1.0;
                    let s = if inside { sig } else { &background };
                    for (b, v) in noisy(s, &noise, &mut rng).enumerate() {
                        data[[x, y, b]] = v;
                    }
                }
            }
            out.push(Recording {
                id: format!("obj_{c}_{i:04}"),
                cube: HyperspectralCube::new(data, grid.clone())?,
                label: c as u16,
            });
        }
    }
    Ok(out)
}
