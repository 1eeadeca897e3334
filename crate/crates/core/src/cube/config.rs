use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetId {
    Hrss,
    Fruit,
    Debris,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Objectwise,
    Patchwise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelTarget {
    Firmness,
    Ripeness,
    Sweetness,
}

/// Train-test ratio of an HRSS configuration, in `(0, 1]`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TrainRatio(f64);

impl TrainRatio {
    pub fn new(r: f64) -> Result<Self> {
        if r.is_finite() && r > 0.0 && r <= 1.0 {
            Ok(Self(r))
        } else {
            Err(Error::InvalidConfig(format!("train ratio {r} outside (0, 1]")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for TrainRatio {
    type Error = Error;
    fn try_from(r: f64) -> Result<Self> {
        Self::new(r)
    }
}

impl From<TrainRatio> for f64 {
    fn from(r: TrainRatio) -> f64 {
        r.0
    }
}

impl PartialEq for TrainRatio {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == Ordering::Equal
    }
}
impl Eq for TrainRatio {}
impl PartialOrd for TrainRatio {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for TrainRatio {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}
impl std::hash::Hash for TrainRatio {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state)
    }
}

/// One benchmark configuration. Field order defines the canonical sort order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DataConfig {
    pub dataset: DatasetId,
    pub scene: String,
    pub camera: String,
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_target: Option<LabelTarget>,
    /// `None` means the split membership is fixed by the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_ratio: Option<TrainRatio>,
}

impl DataConfig {
    pub fn new(
        dataset: DatasetId,
        scene: impl Into<String>,
        camera: impl Into<String>,
        task: TaskKind,
        label_target: Option<LabelTarget>,
        train_ratio: Option<f64>,
    ) -> Result<Self> {
        let cfg = Self {
            dataset,
            scene: scene.into(),
            camera: camera.into(),
            task,
            label_target,
            train_ratio: train_ratio.map(TrainRatio::new).transpose()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn hrss(scene: &str, camera: &str, ratio: f64) -> Result<Self> {
        Self::new(DatasetId::Hrss, scene, camera, TaskKind::Patchwise, None, Some(ratio))
    }

    pub fn validate(&self) -> Result<()> {
        let is_hrss = self.dataset == DatasetId::Hrss;
        if is_hrss != self.train_ratio.is_some() {
            return Err(Error::InvalidConfig(format!(
                "{}: train_ratio must be present exactly for HRSS configurations",
                self.id()
            )));
        }
        if (self.dataset == DatasetId::Fruit) != self.label_target.is_some() {
            return Err(Error::InvalidConfig(format!(
                "{}: label_target must be present exactly for fruit configurations",
                self.id()
            )));
        }
        if is_hrss && self.task != TaskKind::Patchwise {
            return Err(Error::InvalidConfig(format!("{}: HRSS scenes are patchwise", self.id())));
        }
        for part in [&self.scene, &self.camera] {
            if part.is_empty() || part.contains('/') || part.contains(char::is_whitespace) {
                return Err(Error::InvalidConfig(format!("bad identifier {part:?}")));
            }
        }
        Ok(())
    }

    /// Stable textual key, e.g. `hrss/indian_pines/aviris/patchwise/r0.05`.
    pub fn id(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetId::Hrss => "hrss",
            DatasetId::Fruit => "fruit",
            DatasetId::Debris => "debris",
        })
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Objectwise => "objectwise",
            TaskKind::Patchwise => "patchwise",
        })
    }
}

impl fmt::Display for LabelTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelTarget::Firmness => "firmness",
            LabelTarget::Ripeness => "ripeness",
            LabelTarget::Sweetness => "sweetness",
        })
    }
}

impl fmt::Display for DataConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}/{}", self.dataset, self.scene, self.camera, self.task)?;
        if let Some(t) = self.label_target {
            write!(f, "/{t}")?;
        }
        if let Some(r) = self.train_ratio {
            write!(f, "/r{}", r.get())?;
        }
        Ok(())
    }
}

impl FromStr for DatasetId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hrss" => Ok(DatasetId::Hrss),
            "fruit" => Ok(DatasetId::Fruit),
            "debris" => Ok(DatasetId::Debris),
            _ => Err(Error::InvalidConfig(format!("unknown dataset {s:?}"))),
        }
    }
}

impl FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "objectwise" => Ok(TaskKind::Objectwise),
            "patchwise" => Ok(TaskKind::Patchwise),
            _ => Err(Error::InvalidConfig(format!("unknown task kind {s:?}"))),
        }
    }
}

impl FromStr for LabelTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "firmness" => Ok(LabelTarget::Firmness),
            "ripeness" => Ok(LabelTarget::Ripeness),
            "sweetness" | "sugar" => Ok(LabelTarget::Sweetness),
            _ => Err(Error::InvalidConfig(format!("unknown label target {s:?}"))),
        }
    }
}

impl FromStr for DataConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('/').collect();
        if parts.len() < 4 {
            return Err(Error::InvalidConfig(format!("malformed config id {s:?}")));
        }
        let dataset: DatasetId = parts[0].parse()?;
        let task: TaskKind = parts[3].parse()?;
        let mut label_target = None;
        let mut ratio = None;
        for extra in &parts[4..] {
            if let Some(r) = extra.strip_prefix('r').and_then(|r| r.parse::<f64>().ok()) {
                ratio = Some(r);
            } else {
                label_target = Some(extra.parse()?);
            }
        }
        Self::new(dataset, parts[1], parts[2], task, label_target, ratio)
    }
}
