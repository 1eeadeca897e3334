//! Camera and dataset registry, the TOML manifest, asset fetching and scene loading.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cube::{
    DataConfig, DatasetId, HyperspectralCube, LabelMask, LabelTarget, Recording, TaskKind, WavelengthGrid,
};
use crate::error::{Error, Result};
use crate::io::{envi, mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Application {
    Satellite,
    Inline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub camera_id: String,
    pub range_nm: (f64, f64),
    pub band_count: usize,
    pub application: Application,
}

impl CameraSpec {
    pub fn new(camera_id: &str, range_nm: (f64, f64), band_count: usize, application: Application) -> Result<Self> {
        if range_nm.0.partial_cmp(&range_nm.1) != Some(std::cmp::Ordering::Less) || band_count == 0 {
            return Err(Error::InvalidConfig(format!("camera {camera_id}: need min < max and band_count > 0")));
        }
        Ok(Self { camera_id: camera_id.into(), range_nm, band_count, application })
    }

    /// The camera's nominal grid: `band_count` centers spaced linearly over its range.
    pub fn nominal_grid(&self) -> WavelengthGrid {
        WavelengthGrid::linear(self.range_nm.0, self.range_nm.1, self.band_count, self.camera_id.clone())
            .expect("validated camera")
    }
}

/// The five sensors of the benchmark.
pub fn builtin_cameras() -> Vec<CameraSpec> {
    use Application::*;
    [
        ("aviris", (400.0, 2500.0), 224, Satellite),
        ("rosis", (430.0, 860.0), 115, Satellite),
        ("corning_microhsi_410", (408.0, 901.0), 249, Inline),
        ("innospec_redeye", (920.0, 1730.0), 252, Inline),
        ("specim_fx10", (400.0, 1000.0), 224, Inline),
    ]
    .into_iter()
    .map(|(id, r, n, a)| CameraSpec::new(id, r, n, a).expect("static table"))
    .collect()
}

/// One downloadable file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Asset {
    pub uri: String,
    /// Expected content hash; `None` means trust on first use.
    pub sha256: Option<String>,
}

impl Asset {
    pub fn file_name(&self) -> &str {
        self.uri.rsplit('/').next().unwrap_or(&self.uri)
    }
}

/// How the split of an entry is obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase", deny_unknown_fields)]
pub enum SplitSource {
    /// Per-class seeded permutation with a train ratio taken from the config.
    Hrss {
        val_fraction: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Membership fixed by the original publication.
    Fixed {
        /// Expected (train, val, test) sizes.
        sizes: [usize; 3],
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        train: Vec<String>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        val: Vec<String>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        test: Vec<String>,
    },
}

/// How to turn the entry's grid into band centers.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRule {
    /// Bands before removal; defaults to the camera's band count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal_bands: Option<usize>,
    /// 0-based indices (into the nominal grid) of removed bands.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub removed_bands: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub config: DataConfig,
    pub assets: Vec<Asset>,
    /// `(x, y, λ)` for scenes, `(λ)` for object recordings; empty when unknown.
    pub shape: Vec<usize>,
    pub classes: Vec<String>,
    pub splits: SplitSource,
    pub grid: GridRule,
    /// Variable names inside MAT assets: `[cube, ground truth]`.
    pub variables: Vec<String>,
    /// Objectwise labels: record id -> class name.
    pub records: BTreeMap<String, String>,
    /// Published labeled-pixel counts per class.
    pub class_counts: Vec<usize>,
}

impl ManifestEntry {
    /// Band centers: the nominal grid of the camera, minus removed bands.
    pub fn wavelength_grid(&self, camera: &CameraSpec) -> Result<WavelengthGrid> {
        let n = self.grid.nominal_bands.unwrap_or(camera.band_count);
        let nominal = WavelengthGrid::linear(camera.range_nm.0, camera.range_nm.1, n, camera.camera_id.clone())?;
        nominal.without_bands(&self.grid.removed_bands)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    dataset: DatasetId,
    scene: String,
    camera: String,
    task: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_target: Option<LabelTarget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train_ratio: Option<f64>,
    #[serde(default)]
    uri: Vec<String>,
    #[serde(default)]
    sha256: Vec<String>,
    #[serde(default)]
    shape: Vec<usize>,
    classes: Vec<String>,
    splits: SplitSource,
    #[serde(default, skip_serializing_if = "is_default_grid")]
    grid: GridRule,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    variables: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    records: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    class_counts: Vec<usize>,
}

fn is_default_grid(g: &GridRule) -> bool {
    *g == GridRule::default()
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    #[serde(default, rename = "camera")]
    cameras: Vec<CameraSpec>,
    #[serde(default, rename = "entry")]
    entries: Vec<RawEntry>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub cameras: Vec<CameraSpec>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawManifest =
            toml::from_str(text).map_err(|e| Error::Manifest { context: "toml".into(), message: e.to_string() })?;
        let mut entries = Vec::with_capacity(raw.entries.len());
        for (i, e) in raw.entries.into_iter().enumerate() {
            let ctx = format!("entry #{} ({}/{})", i + 1, e.scene, e.camera);
            let err = |m: String| Error::Manifest { context: ctx.clone(), message: m };
            let config = DataConfig::new(e.dataset, e.scene, e.camera, e.task, e.label_target, e.train_ratio)
                .map_err(|x| err(x.to_string()))?;
            if !e.sha256.is_empty() && e.sha256.len() != e.uri.len() {
                return Err(err(format!("{} uris but {} hashes", e.uri.len(), e.sha256.len())));
            }
            let assets = e
                .uri
                .iter()
                .enumerate()
                .map(|(k, uri)| Asset {
                    uri: uri.clone(),
                    sha256: e.sha256.get(k).filter(|h| !h.is_empty()).map(|h| h.to_lowercase()),
                })
                .collect();
            entries.push(ManifestEntry {
                config,
                assets,
                shape: e.shape,
                classes: e.classes,
                splits: e.splits,
                grid: e.grid,
                variables: e.variables,
                records: e.records,
                class_counts: e.class_counts,
            });
        }
        let m = Self { cameras: raw.cameras, entries };
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        let raw = RawManifest {
            cameras: self.cameras.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| RawEntry {
                    dataset: e.config.dataset,
                    scene: e.config.scene.clone(),
                    camera: e.config.camera.clone(),
                    task: e.config.task,
                    label_target: e.config.label_target,
                    train_ratio: e.config.train_ratio.map(|r| r.get()),
                    uri: e.assets.iter().map(|a| a.uri.clone()).collect(),
                    sha256: if e.assets.iter().any(|a| a.sha256.is_some()) {
                        e.assets.iter().map(|a| a.sha256.clone().unwrap_or_default()).collect()
                    } else {
                        Vec::new()
                    },
                    shape: e.shape.clone(),
                    classes: e.classes.clone(),
                    splits: e.splits.clone(),
                    grid: e.grid.clone(),
                    variables: e.variables.clone(),
                    records: e.records.clone(),
                    class_counts: e.class_counts.clone(),
                })
                .collect(),
        };
        toml::to_string(&raw).expect("manifest serializes")
    }

    /// sha256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let cams: BTreeSet<&str> = self.cameras.iter().map(|c| c.camera_id.as_str()).collect();
        for c in &self.cameras {
            CameraSpec::new(&c.camera_id, c.range_nm, c.band_count, c.application)?;
        }
        for (i, e) in self.entries.iter().enumerate() {
            let ctx = format!("entry #{} ({})", i + 1, e.config);
            let err = |m: String| Err(Error::Manifest { context: ctx.clone(), message: m });
            if !seen.insert(e.config.clone()) {
                return err("duplicate configuration".into());
            }
            if !cams.contains(e.config.camera.as_str()) {
                return err(format!("unknown camera '{}'", e.config.camera));
            }
            if e.classes.is_empty() {
                return err("empty class list".into());
            }
            match (&e.splits, e.config.dataset) {
                (SplitSource::Hrss { val_fraction, .. }, DatasetId::Hrss) => {
                    if !(0.0..1.0).contains(val_fraction) {
                        return err(format!("val_fraction {val_fraction} outside [0, 1)"));
                    }
                }
                (SplitSource::Fixed { .. }, DatasetId::Fruit | DatasetId::Debris) => {}
                _ => return err("HRSS entries need an hrss split rule, fruit/debris entries a fixed split".into()),
            }
            if !e.class_counts.is_empty() && e.class_counts.len() != e.classes.len() {
                return err("class_counts length differs from classes".into());
            }
            if let Some(bad) = e.records.values().find(|c| !e.classes.contains(c)) {
                return err(format!("record label '{bad}' not in classes"));
            }
        }
        Ok(())
    }

    pub fn camera(&self, id: &str) -> Result<&CameraSpec> {
        self.cameras
            .iter()
            .find(|c| c.camera_id == id)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown camera '{id}'")))
    }

    pub fn entry(&self, config: &DataConfig) -> Result<&ManifestEntry> {
        self.entries.iter().find(|e| &e.config == config).ok_or_else(|| Error::ConfigNotInManifest(config.id()))
    }

    /// Like [`entry`](Self::entry) but keyed by the textual id.
    pub fn entry_by_id(&self, id: &str) -> Result<&ManifestEntry> {
        self.entries.iter().find(|e| e.config.id() == id).ok_or_else(|| Error::ConfigNotInManifest(id.into()))
    }
}

/// All configurations of the manifest in canonical order.
pub fn list_configs(manifest: &DatasetManifest) -> Vec<DataConfig> {
    let mut v: Vec<_> = manifest.entries.iter().map(|e| e.config.clone()).collect();
    v.sort();
    v
}

const EHU: &str = "http://www.ehu.eus/ccwintco/uploads";

/// Scene table of the HRSS data set.
struct HrssScene {
    scene: &'static str,
    camera: &'static str,
    files: [&'static str; 2],
    variables: [&'static str; 2],
    shape: [usize; 3],
    nominal_bands: usize,
    /// 1-based inclusive ranges of removed bands.
    removed: &'static [(usize, usize)],
    classes: &'static [&'static str],
    counts: &'static [usize],
}

const HRSS: [HrssScene; 3] = [
    HrssScene {
        scene: "indian_pines",
        camera: "aviris",
        files: ["6/67/Indian_pines_corrected.mat", "c/c4/Indian_pines_gt.mat"],
        variables: ["indian_pines_corrected", "indian_pines_gt"],
        shape: [145, 145, 200],
        nominal_bands: 220,
        removed: &[(104, 108), (150, 163), (220, 220)],
        classes: &[
            "Alfalfa",
            "Corn-notill",
            "Corn-mintill",
            "Corn",
            "Grass-pasture",
            "Grass-trees",
            "Grass-pasture-mowed",
            "Hay-windrowed",
            "Oats",
            "Soybean-notill",
            "Soybean-mintill",
            "Soybean-clean",
            "Wheat",
            "Woods",
            "Buildings-Grass-Trees-Drives",
            "Stone-Steel-Towers",
        ],
        counts: &[46, 1428, 830, 237, 483, 730, 28, 478, 20, 972, 2455, 593, 205, 1265, 386, 93],
    },
    HrssScene {
        scene: "pavia_university",
        camera: "rosis",
        files: ["e/ee/PaviaU.mat", "5/50/PaviaU_gt.mat"],
        variables: ["paviaU", "paviaU_gt"],
        shape: [610, 340, 103],
        nominal_bands: 103,
        removed: &[],
        classes: &[
            "Asphalt",
            "Meadows",
            "Gravel",
            "Trees",
            "Painted metal sheets",
            "Bare Soil",
            "Bitumen",
            "Self-Blocking Bricks",
            "Shadows",
        ],
        counts: &[6631, 18649, 2099, 3064, 1345, 5029, 1330, 3682, 947],
    },
    HrssScene {
        scene: "salinas",
        camera: "aviris",
        files: ["a/a3/Salinas_corrected.mat", "f/fa/Salinas_gt.mat"],
        variables: ["salinas_corrected", "salinas_gt"],
        shape: [512, 217, 204],
        nominal_bands: 224,
        removed: &[(108, 112), (154, 167), (224, 224)],
        classes: &[
            "Brocoli_green_weeds_1",
            "Brocoli_green_weeds_2",
            "Fallow",
            "Fallow_rough_plow",
            "Fallow_smooth",
            "Stubble",
            "Celery",
            "Grapes_untrained",
            "Soil_vinyard_develop",
            "Corn_senesced_green_weeds",
            "Lettuce_romaine_4wk",
            "Lettuce_romaine_5wk",
            "Lettuce_romaine_6wk",
            "Lettuce_romaine_7wk",
            "Vinyard_untrained",
            "Vinyard_vertical_trellis",
        ],
        counts: &[2009, 3726, 1976, 1394, 2678, 3959, 3579, 11271, 6203, 3278, 1068, 1927, 916, 1070, 7268, 1807],
    },
];

/// Published per-class labeled-pixel counts of an HRSS scene.
pub fn hrss_class_counts(scene: &str) -> Option<&'static [usize]> {
    HRSS.iter().find(|s| s.scene == scene).map(|s| s.counts)
}

/// (fruit, target, camera, train, val, test)
const FRUIT: &[(&str, &str, &str, usize, usize, usize)] = &[
    ("avocado", "firmness", "corning_microhsi_410", 50, 9, 9),
    ("avocado", "firmness", "innospec_redeye", 40, 9, 9),
    ("avocado", "firmness", "specim_fx10", 139, 23, 24),
    ("avocado", "ripeness", "corning_microhsi_410", 50, 9, 9),
    ("avocado", "ripeness", "innospec_redeye", 40, 9, 9),
    ("avocado", "ripeness", "specim_fx10", 142, 24, 24),
    ("kaki", "firmness", "corning_microhsi_410", 56, 12, 12),
    ("kaki", "firmness", "specim_fx10", 56, 12, 12),
    ("kaki", "ripeness", "corning_microhsi_410", 56, 12, 12),
    ("kaki", "ripeness", "specim_fx10", 56, 12, 12),
    ("kaki", "sweetness", "corning_microhsi_410", 56, 12, 12),
    ("kaki", "sweetness", "specim_fx10", 56, 12, 12),
    ("kiwi", "firmness", "innospec_redeye", 58, 9, 9),
    ("kiwi", "firmness", "specim_fx10", 128, 21, 23),
    ("kiwi", "ripeness", "innospec_redeye", 58, 9, 9),
    ("kiwi", "ripeness", "specim_fx10", 138, 24, 24),
    ("kiwi", "sweetness", "innospec_redeye", 58, 9, 9),
    ("kiwi", "sweetness", "specim_fx10", 128, 21, 23),
    ("mango", "firmness", "corning_microhsi_410", 56, 12, 12),
    ("mango", "firmness", "specim_fx10", 56, 12, 12),
    ("mango", "ripeness", "corning_microhsi_410", 56, 12, 12),
    ("mango", "ripeness", "specim_fx10", 56, 12, 12),
    ("mango", "sweetness", "corning_microhsi_410", 56, 12, 12),
    ("mango", "sweetness", "specim_fx10", 56, 12, 12),
    ("papaya", "firmness", "corning_microhsi_410", 42, 9, 9),
    ("papaya", "firmness", "specim_fx10", 42, 9, 9),
    ("papaya", "ripeness", "corning_microhsi_410", 42, 9, 9),
    ("papaya", "ripeness", "specim_fx10", 42, 9, 9),
    ("papaya", "sweetness", "corning_microhsi_410", 42, 9, 9),
    ("papaya", "sweetness", "specim_fx10", 42, 9, 9),
];

/// (camera, task, train, val, test)
const DEBRIS: &[(&str, TaskKind, usize, usize, usize)] = &[
    ("corning_microhsi_410", TaskKind::Objectwise, 50, 10, 10),
    ("corning_microhsi_410", TaskKind::Patchwise, 7624, 1570, 1_292_409),
    ("specim_fx10", TaskKind::Objectwise, 50, 10, 10),
    ("specim_fx10", TaskKind::Patchwise, 5974, 1262, 1_119_347),
];

fn fruit_classes(target: LabelTarget) -> Vec<String> {
    let names: &[&str] = match target {
        LabelTarget::Firmness => &["too_hard", "perfect", "too_soft"],
        LabelTarget::Ripeness => &["unripe", "perfect", "overripe"],
        LabelTarget::Sweetness => &["not_sweet", "sweet", "very_sweet"],
    };
    names.iter().map(|s| s.to_string()).collect()
}

/// The full benchmark manifest: 9 HRSS, 4 Debris and 30 Fruit configurations.
///
/// Fruit and Debris entries carry expected split sizes but no assets.
pub fn builtin_manifest() -> DatasetManifest {
    let mut entries = Vec::new();
    for s in &HRSS {
        let removed = s.removed.iter().flat_map(|&(a, b)| (a - 1)..b).collect::<Vec<_>>();
        for r in [0.05, 0.1, 0.3] {
            entries.push(ManifestEntry {
                config: DataConfig::hrss(s.scene, s.camera, r).expect("static"),
                assets: s.files.iter().map(|f| Asset { uri: format!("{EHU}/{f}"), sha256: None }).collect(),
                shape: s.shape.to_vec(),
                classes: s.classes.iter().map(|c| c.to_string()).collect(),
                splits: SplitSource::Hrss { val_fraction: 0.25, seed: 0 },
                grid: GridRule { nominal_bands: Some(s.nominal_bands), removed_bands: removed.clone() },
                variables: s.variables.iter().map(|v| v.to_string()).collect(),
                records: BTreeMap::new(),
                class_counts: s.counts.to_vec(),
            });
        }
    }
    for &(cam, task, tr, va, te) in DEBRIS {
        entries.push(ManifestEntry {
            config: DataConfig::new(DatasetId::Debris, "debris", cam, task, None, None).expect("static"),
            assets: Vec::new(),
            shape: Vec::new(),
            classes: ["asphalt", "brick", "ceramic", "concrete", "tile"].iter().map(|s| s.to_string()).collect(),
            splits: SplitSource::Fixed { sizes: [tr, va, te], train: Vec::new(), val: Vec::new(), test: Vec::new() },
            grid: GridRule::default(),
            variables: Vec::new(),
            records: BTreeMap::new(),
            class_counts: Vec::new(),
        });
    }
    for &(fruit, target, cam, tr, va, te) in FRUIT {
        let target: LabelTarget = target.parse().expect("static");
        entries.push(ManifestEntry {
            config: DataConfig::new(DatasetId::Fruit, fruit, cam, TaskKind::Objectwise, Some(target), None)
                .expect("static"),
            assets: Vec::new(),
            shape: Vec::new(),
            classes: fruit_classes(target),
            splits: SplitSource::Fixed { sizes: [tr, va, te], train: Vec::new(), val: Vec::new(), test: Vec::new() },
            grid: GridRule::default(),
            variables: Vec::new(),
            records: BTreeMap::new(),
            class_counts: Vec::new(),
        });
    }
    DatasetManifest { cameras: builtin_cameras(), entries }
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".sha256");
    PathBuf::from(s)
}

fn download(uri: &str, dest: &Path) -> Result<()> {
    let fetch_err = |reason: String| Error::Fetch { uri: uri.into(), reason };
    let tmp = dest.with_extension("part");
    if let Some(local) = uri.strip_prefix("file://") {
        std::fs::copy(local, &tmp).map_err(|e| fetch_err(e.to_string()))?;
    } else if uri.starts_with("http://") || uri.starts_with("https://") {
        let resp = ureq::get(uri).call().map_err(|e| fetch_err(e.to_string()))?;
        let mut reader = resp.into_reader();
        let mut out = File::create(&tmp)?;
        std::io::copy(&mut reader, &mut out).map_err(|e| fetch_err(e.to_string()))?;
        out.sync_all()?;
    } else {
        return Err(fetch_err("unsupported scheme".into()));
    }
    std::fs::rename(&tmp, dest)?;
    Ok(())
}

/// Cache location of an asset: `<cache>/<dataset>/<scene>/<file name>`.
pub fn asset_path(cache_dir: &Path, config: &DataConfig, asset: &Asset) -> PathBuf {
    cache_dir.join(config.dataset.to_string()).join(&config.scene).join(asset.file_name())
}

fn fetch_one(asset: &Asset, dest: &Path) -> Result<()> {
    let lock_path = {
        let mut s = dest.as_os_str().to_owned();
        s.push(".lock");
        PathBuf::from(s)
    };
    let lock = OpenOptions::new().create(true).truncate(false).write(true).open(&lock_path)?;
    lock.lock()?;
    let side = sidecar(dest);
    let expected = match &asset.sha256 {
        Some(h) => Some(h.clone()),
        None => std::fs::read_to_string(&side).ok().map(|s| s.trim().to_lowercase()),
    };
    if dest.exists() {
        let actual = sha256_file(dest)?;
        match &expected {
            Some(e) if *e == actual => return Ok(()),
            None => {
                log::warn!("{}: no known hash, recording {actual} on first use", asset.uri);
                std::fs::write(&side, format!("{actual}\n"))?;
                return Ok(());
            }
            Some(_) => log::warn!("{}: cached copy corrupted, fetching again", dest.display()),
        }
    }
    download(&asset.uri, dest)?;
    let actual = sha256_file(dest)?;
    match expected {
        Some(e) if e != actual => Err(Error::Integrity { uri: asset.uri.clone(), expected: e, actual }),
        Some(_) => Ok(()),
        None => {
            let mut f = File::create(&side)?;
            writeln!(f, "{actual}")?;
            Ok(())
        }
    }
}

/// Make every asset of `config` present and verified in `cache_dir`.
///
/// A cached file whose hash matches is used without network access. Assets
/// without a manifest hash are pinned on first use through a `.sha256` sidecar.
pub fn fetch_assets(manifest: &DatasetManifest, config: &DataConfig, cache_dir: &Path) -> Result<Vec<PathBuf>> {
    let entry = manifest.entry(config)?;
    if entry.assets.is_empty() {
        return Err(Error::Fetch {
            uri: config.id(),
            reason: "the manifest lists no downloadable assets for this configuration".into(),
        });
    }
    let mut out = Vec::with_capacity(entry.assets.len());
    for asset in &entry.assets {
        let dest = asset_path(cache_dir, config, asset);
        if let Some(parent) = dest.parent() {
            std::fs::create_dir_all(parent)?;
        }
        fetch_one(asset, &dest)?;
        out.push(dest);
    }
    Ok(out)
}

/// Scene content of one configuration.
#[derive(Clone, Debug)]
pub enum SceneData {
    Scene { cube: HyperspectralCube, mask: LabelMask },
    Objects { recordings: Vec<Recording>, classes: Vec<String> },
}

fn is_mat(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("mat"))
}

/// Load the fetched assets of `config` and check them against the manifest.
///
/// Patchwise scenes take two assets (cube, ground truth) in MAT or ENVI form,
/// with a 1-based ground truth where 0 marks unlabeled pixels. Objectwise
/// configurations take one ENVI file per record, named after the record id.
/// ENVI `.hdr` paths in `paths` are skipped; headers are found next to their data.
pub fn load_scene(manifest: &DatasetManifest, config: &DataConfig, paths: &[PathBuf]) -> Result<SceneData> {
    let entry = manifest.entry(config)?;
    let paths: Vec<PathBuf> =
        paths.iter().filter(|p| !p.extension().is_some_and(|e| e.eq_ignore_ascii_case("hdr"))).cloned().collect();
    let camera = manifest.camera(&config.camera)?;
    match config.task {
        TaskKind::Patchwise => {
            let [data_path, gt_path] = paths.as_slice() else {
                return Err(Error::InvalidConfig(format!("{config}: expected 2 asset paths, got {}", paths.len())));
            };
            let (data, explicit_wl, raw_gt) = if is_mat(data_path) {
                let [cube_var, gt_var] = entry.variables.as_slice() else {
                    return Err(Error::load(data_path, "manifest entry names no MAT variables"));
                };
                let data = mat::read_mat_var(data_path, cube_var)?.to_cube_data()?;
                let gt = mat::read_mat_var(gt_path, gt_var)?.to_label_map()?;
                (data, None, gt)
            } else {
                let (h, data) = envi::read_envi(data_path)?;
                let (_, gt) = envi::read_envi_labels(gt_path)?;
                (data, h.wavelengths, gt)
            };
            let found = vec![data.dim().0, data.dim().1, data.dim().2];
            if !entry.shape.is_empty() && entry.shape != found {
                return Err(Error::ShapeMismatch { scene: config.scene.clone(), expected: entry.shape.clone(), found });
            }
            if raw_gt.dim() != (found[0], found[1]) {
                return Err(Error::ShapeMismatch {
                    scene: format!("{} ground truth", config.scene),
                    expected: found[..2].to_vec(),
                    found: vec![raw_gt.dim().0, raw_gt.dim().1],
                });
            }
            let grid = match explicit_wl {
                Some(wl) => WavelengthGrid::new(wl, camera.camera_id.clone())?,
                None => entry.wavelength_grid(camera)?,
            };
            let outside = grid.outside(camera.range_nm.0, camera.range_nm.1);
            if !outside.is_empty() {
                return Err(Error::InvalidGrid(format!(
                    "{config}: wavelengths {outside:?} outside the {} range",
                    camera.camera_id
                )));
            }
            if data.iter().any(|v| *v < 0.0) {
                log::warn!("{config}: cube contains negative values");
            }
            let cube = HyperspectralCube::new(data, grid)?;
            let mask = LabelMask::from_one_based(&raw_gt, entry.classes.clone())?;
            Ok(SceneData::Scene { cube, mask })
        }
        TaskKind::Objectwise => {
            let mut recordings = Vec::with_capacity(paths.len());
            for p in &paths {
                let id = p
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| Error::load(p, "file name is not a record id"))?
                    .to_string();
                let class = entry
                    .records
                    .get(&id)
                    .ok_or_else(|| Error::load(p, format!("record '{id}' has no label in the manifest")))?;
                let label = entry.classes.iter().position(|c| c == class).expect("validated") as u16;
                let (h, data) = envi::read_envi(p)?;
                let grid = match h.wavelengths {
                    Some(wl) => WavelengthGrid::new(wl, camera.camera_id.clone())?,
                    None => entry.wavelength_grid(camera)?,
                };
                if let Some(&bands) = entry.shape.last() {
                    if bands != data.dim().2 {
                        return Err(Error::ShapeMismatch {
                            scene: id,
                            expected: vec![bands],
                            found: vec![data.dim().2],
                        });
                    }
                }
                recordings.push(Recording { id, cube: HyperspectralCube::new(data, grid)?, label });
            }
            Ok(SceneData::Objects { recordings, classes: entry.classes.clone() })
        }
    }
}
