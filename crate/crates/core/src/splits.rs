//! Train/validation/test assignment.
//!
//! HRSS scenes are split per class: the labeled pixels of class `c` are put in a
//! seeded order, the first `floor(r * n_c)` go to train+val, and of those the last
//! `floor(val_fraction * n_tv)` go to validation. Fruit and Debris splits are
//! listed in the manifest.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cube::LabelMask;
use crate::error::{Error, Result};
use crate::registry::{ManifestEntry, SplitSource};
use crate::rng::{key_u64, splitmix64};

/// Guards the floor against products like `0.3 * 10 = 2.9999999999999996`.
const FLOOR_EPS: f64 = 1e-9;

/// `floor(r * n)`, robust to binary rounding of `r`.
pub fn floor_count(r: f64, n: usize) -> usize {
    (r * n as f64 + FLOOR_EPS).floor() as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ratio: f64,
    pub val_fraction: f64,
    pub seed: u64,
    /// Scene identifier mixed into the permutation key.
    pub scene: String,
}

impl SplitSpec {
    pub fn new(scene: &str, train_ratio: f64, seed: u64) -> Self {
        Self { train_ratio, val_fraction: 0.25, seed, scene: scene.into() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_ratio > 0.0 && self.train_ratio <= 1.0) {
            return Err(Error::Split(format!("train ratio {} outside (0, 1]", self.train_ratio)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Split(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        Ok(())
    }
}

/// A unit of assignment.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Unit {
    /// Field order gives per-class scan order when sorted.
    Pixel {
        class: u16,
        x: u32,
        y: u32,
    },
    Record {
        id: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
    /// Dropped by a train-ratio reduction; never used.
    Unused,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
            SplitTag::Unused => "unused",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "train" => SplitTag::Train,
            "val" => SplitTag::Val,
            "test" => SplitTag::Test,
            "unused" => SplitTag::Unused,
            _ => return None,
        })
    }
}

/// Disjoint unit lists, each sorted.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<Unit>,
    pub val: Vec<Unit>,
    pub test: Vec<Unit>,
    pub unused: Vec<Unit>,
}

impl SplitAssignment {
    pub fn get(&self, tag: SplitTag) -> &[Unit] {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Val => &self.val,
            SplitTag::Test => &self.test,
            SplitTag::Unused => &self.unused,
        }
    }

    fn get_mut(&mut self, tag: SplitTag) -> &mut Vec<Unit> {
        match tag {
            SplitTag::Train => &mut self.train,
            SplitTag::Val => &mut self.val,
            SplitTag::Test => &mut self.test,
            SplitTag::Unused => &mut self.unused,
        }
    }

    /// `(train, val, test)` sizes.
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len() + self.unused.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every unit with its tag, in export order.
    pub fn iter(&self) -> impl Iterator<Item = (SplitTag, &Unit)> {
        [SplitTag::Train, SplitTag::Val, SplitTag::Test, SplitTag::Unused]
            .into_iter()
            .flat_map(move |t| self.get(t).iter().map(move |u| (t, u)))
    }

    /// Pixel coordinates of one split.
    pub fn pixels(&self, tag: SplitTag) -> Vec<(usize, usize)> {
        self.get(tag)
            .iter()
            .filter_map(|u| match u {
                Unit::Pixel { x, y, .. } => Some((*x as usize, *y as usize)),
                Unit::Record { .. } => None,
            })
            .collect()
    }

    /// Check pairwise disjointness.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (tag, u) in self.iter() {
            if !seen.insert(u) {
                return Err(Error::Split(format!("unit {u:?} appears twice (second time in {})", tag.as_str())));
            }
        }
        Ok(())
    }

    fn sort(&mut self) {
        for t in [SplitTag::Train, SplitTag::Val, SplitTag::Test, SplitTag::Unused] {
            self.get_mut(t).sort();
        }
    }
}

/// Seeded order of `n` items for one class: indices sorted by a keyed hash.
fn class_order(seed: u64, scene: &str, class: u16, n: usize) -> Vec<usize> {
    let base = key_u64("hrss-split", &[seed, key_u64(scene, &[]), class as u64]);
    let mut keyed: Vec<(u64, usize)> = (0..n).map(|i| (splitmix64(base ^ splitmix64(i as u64)), i)).collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// `(n_tv, val)` for a class of `n` pixels.
pub fn class_allocation(n: usize, train_ratio: f64, val_fraction: f64) -> (usize, usize) {
    let n_tv = floor_count(train_ratio, n);
    (n_tv, floor_count(val_fraction, n_tv))
}

/// Deterministic per-class split of the labeled pixels of `mask`.
pub fn assign_hrss_split(mask: &LabelMask, spec: &SplitSpec) -> Result<SplitAssignment> {
    spec.validate()?;
    let by_class = mask.pixels_by_class();
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::Split(format!("class {c} has no labeled pixels")));
    }
    let mut out = SplitAssignment::default();
    for (c, pixels) in by_class.iter().enumerate() {
        let c = c as u16;
        let (n_tv, n_val) = class_allocation(pixels.len(), spec.train_ratio, spec.val_fraction);
        let n_train = n_tv - n_val;
        for (pos, &i) in class_order(spec.seed, &spec.scene, c, pixels.len()).iter().enumerate() {
            let (x, y) = pixels[i];
            let unit = Unit::Pixel { class: c, x: x as u32, y: y as u32 };
            let tag = if pos < n_train {
                SplitTag::Train
            } else if pos < n_tv {
                SplitTag::Val
            } else {
                SplitTag::Test
            };
            out.get_mut(tag).push(unit);
        }
    }
    if out.train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    out.sort();
    Ok(out)
}

/// Shrink train+val to `target_r` with the same per-class floor rule, keeping test fixed.
///
/// `original` is the spec the assignment was made with; the retained train/val
/// members then equal a direct assignment at `target_r`. Dropped units go to `unused`.
pub fn reduce_train_ratio(
    assignment: &SplitAssignment,
    target_r: f64,
    original: &SplitSpec,
) -> Result<SplitAssignment> {
    let (original_r, seed, scene, val_fraction) =
        (original.train_ratio, original.seed, original.scene.as_str(), original.val_fraction);
    if target_r > original_r {
        return Err(Error::Split(format!("target ratio {target_r} exceeds original ratio {original_r}")));
    }
    if target_r.is_nan() || target_r <= 0.0 {
        return Err(Error::Split(format!("target ratio {target_r} must be positive")));
    }
    let mut per_class: std::collections::BTreeMap<u16, Vec<(usize, usize)>> = Default::default();
    let mut tv: BTreeSet<&Unit> = BTreeSet::new();
    for (tag, u) in assignment.iter() {
        let Unit::Pixel { class, x, y } = u else {
            return Err(Error::Split("reduction applies to pixel splits only".into()));
        };
        per_class.entry(*class).or_default().push((*x as usize, *y as usize));
        if matches!(tag, SplitTag::Train | SplitTag::Val) {
            tv.insert(u);
        }
    }
    let mut out = SplitAssignment { test: assignment.test.clone(), ..Default::default() };
    for (&c, pixels) in per_class.iter_mut() {
        pixels.sort();
        let n = pixels.len();
        let (n_tv, n_val) = class_allocation(n, target_r, val_fraction);
        let had_train = assignment.train.iter().any(|u| matches!(u, Unit::Pixel { class, .. } if *class == c));
        if had_train && n_tv - n_val == 0 {
            return Err(Error::Split(format!("class {c} keeps no training pixel at ratio {target_r}")));
        }
        let mut kept = 0;
        for &i in &class_order(seed, scene, c, n) {
            let (x, y) = pixels[i];
            let unit = Unit::Pixel { class: c, x: x as u32, y: y as u32 };
            if !tv.contains(&unit) {
                continue;
            }
            let tag = if kept < n_tv - n_val {
                SplitTag::Train
            } else if kept < n_tv {
                SplitTag::Val
            } else {
                SplitTag::Unused
            };
            kept += 1;
            out.get_mut(tag).push(unit);
        }
        if kept < n_tv {
            return Err(Error::Split(format!("class {c}: original train+val holds {kept} pixels, {n_tv} needed")));
        }
    }
    out.unused.extend(assignment.unused.iter().cloned());
    out.sort();
    Ok(out)
}

/// Membership listed in the manifest.
pub fn load_fixed_split(entry: &ManifestEntry) -> Result<SplitAssignment> {
    let SplitSource::Fixed { sizes, train, val, test } = &entry.splits else {
        return Err(Error::Split(format!("{}: not a fixed-split configuration", entry.config)));
    };
    if train.is_empty() && val.is_empty() && test.is_empty() {
        return Err(Error::Split(format!(
            "{}: manifest carries split sizes {sizes:?} but no membership lists",
            entry.config
        )));
    }
    let rec = |ids: &[String]| -> Vec<Unit> { ids.iter().map(|id| Unit::Record { id: id.clone() }).collect() };
    let mut out = SplitAssignment { train: rec(train), val: rec(val), test: rec(test), unused: Vec::new() };
    out.validate()?;
    let found = [out.train.len(), out.val.len(), out.test.len()];
    if found != *sizes {
        return Err(Error::Split(format!("{}: listed sizes {found:?} differ from declared {sizes:?}", entry.config)));
    }
    if !entry.records.is_empty() {
        let listed: BTreeSet<&str> = train.iter().chain(val).chain(test).map(String::as_str).collect();
        let known: BTreeSet<&str> = entry.records.keys().map(String::as_str).collect();
        if let Some(missing) = known.difference(&listed).next() {
            return Err(Error::Split(format!("record '{missing}' is in no split")));
        }
        if let Some(extra) = listed.difference(&known).next() {
            return Err(Error::Split(format!("split lists unknown record '{extra}'")));
        }
    }
    out.sort();
    Ok(out)
}

/// One line per unit: `class_id x y tag` or `record_id tag`.
pub fn export_split(assignment: &SplitAssignment) -> String {
    let mut s = String::new();
    for (tag, u) in assignment.iter() {
        match u {
            Unit::Pixel { class, x, y } => writeln!(s, "{class} {x} {y} {}", tag.as_str()),
            Unit::Record { id } => writeln!(s, "{id} {}", tag.as_str()),
        }
        .expect("string write");
    }
    s
}

pub fn import_split(text: &str) -> Result<SplitAssignment> {
    let mut out = SplitAssignment::default();
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Split(format!("line {}: cannot parse {line:?}", no + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        let (unit, tag) = match fields.as_slice() {
            [c, x, y, t] => (
                Unit::Pixel {
                    class: c.parse().map_err(|_| bad())?,
                    x: x.parse().map_err(|_| bad())?,
                    y: y.parse().map_err(|_| bad())?,
                },
                t,
            ),
            [id, t] => (Unit::Record { id: id.to_string() }, t),
            _ => return Err(bad()),
        };
        out.get_mut(SplitTag::parse(tag).ok_or_else(bad)?).push(unit);
    }
    out.validate()?;
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn mask_from_counts(counts: &[usize]) -> LabelMask {
        let total: usize = counts.iter().sum();
        let w = (total as f64).sqrt().ceil() as usize;
        let h = total.div_ceil(w);
        let mut labels = Array2::from_elem((w, h), LabelMask::DEFAULT_IGNORE);
        let mut it = labels.iter_mut();
        for (c, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                *it.next().unwrap() = c as u16;
            }
        }
        LabelMask::new(labels, (0..counts.len()).map(|c| c.to_string()).collect(), LabelMask::DEFAULT_IGNORE).unwrap()
    }

    #[test]
    fn floor_arithmetic_single_class() {
        let m = mask_from_counts(&[20, 20]);
        let a = assign_hrss_split(&m, &SplitSpec::new("s", 0.05, 0)).unwrap();
        assert_eq!(a.sizes(), (2, 0, 38));
        assert_eq!(class_allocation(20, 0.05, 0.25), (1, 0));
    }

    #[test]
    fn floor_is_robust_to_rounding() {
        assert_eq!(floor_count(0.3, 10), 3);
        assert_eq!(floor_count(0.1, 30), 3);
        assert_eq!(floor_count(0.05, 19), 0);
    }

    #[test]
    fn indian_pines_small_ratio() {
        let m = mask_from_counts(crate::registry::hrss_class_counts("indian_pines").unwrap());
        let a = assign_hrss_split(&m, &SplitSpec::new("indian_pines", 0.05, 0)).unwrap();
        assert_eq!(a.sizes(), (385, 120, 9744));
    }

    #[test]
    fn empty_training_set_rejected() {
        let m = mask_from_counts(&[3, 4]);
        assert!(matches!(assign_hrss_split(&m, &SplitSpec::new("s", 0.1, 0)), Err(Error::EmptyTrainingSet)));
    }

    #[test]
    fn reduce_identity_and_errors() {
        let m = mask_from_counts(&[50, 80, 33]);
        let spec = SplitSpec::new("s", 0.3, 4);
        let a = assign_hrss_split(&m, &spec).unwrap();
        assert_eq!(reduce_train_ratio(&a, 0.3, &spec).unwrap(), a);
        assert!(reduce_train_ratio(&a, 0.5, &spec).is_err());
        assert!(reduce_train_ratio(&a, 0.01, &spec).is_err());
    }

    #[test]
    fn export_import_round_trip() {
        let m = mask_from_counts(&[10, 12]);
        let a = assign_hrss_split(&m, &SplitSpec::new("s", 0.5, 1)).unwrap();
        let text = export_split(&a);
        assert_eq!(text.lines().count(), 22);
        let b = import_split(&text).unwrap();
        assert_eq!(a, b);
        assert_eq!(export_split(&b), text);
        assert!(import_split("0 1 2 nowhere\n").is_err());
        assert!(import_split("0 1 2 train\n0 1 2 test\n").is_err());
    }
}
