use std::sync::Arc;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::SampleSource;
use crate::cube::{DataConfig, HyperspectralCube, LabelMask};
use crate::error::{Error, Result};
use crate::splits::{SplitAssignment, SplitTag, Unit};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Reflection without repeating the edge pixel.
    #[default]
    Mirror,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    pub size: usize,
    /// Distance between consecutive training patch centers, per class in scan order.
    pub train_stride: usize,
    pub test_stride: usize,
    /// Spacing of the sampling grid inside a patch (1 = contiguous).
    #[serde(default = "one")]
    pub intra_dilation: usize,
    #[serde(default)]
    pub padding: Padding,
}

fn one() -> usize {
    1
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self { size: 63, train_stride: 1, test_stride: 1, intra_dilation: 1, padding: Padding::Mirror }
    }
}

impl PatchSpec {
    pub fn with_size(size: usize) -> Self {
        Self { size, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size.is_multiple_of(2) || self.size == 0 {
            return Err(Error::Sampler(format!("patch size {} must be odd", self.size)));
        }
        if self.train_stride == 0 || self.test_stride == 0 || self.intra_dilation == 0 {
            return Err(Error::Sampler("strides and dilation must be >= 1".into()));
        }
        Ok(())
    }

    fn stride_for(&self, tag: SplitTag) -> usize {
        match tag {
            SplitTag::Test => self.test_stride,
            _ => self.train_stride,
        }
    }
}

/// Reflect index `i` into `0..n` (`-1 -> 1`, `n -> n - 2`).
pub fn mirror_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Patches centered on the selected labeled pixels of one split.
#[derive(Clone, Debug)]
pub struct PatchSet {
    cube: Arc<HyperspectralCube>,
    units: Vec<Unit>,
    centers: Vec<(usize, usize, u16)>,
    spec: PatchSpec,
    split: SplitTag,
    config: Arc<DataConfig>,
    class_count: usize,
}

/// Select the patches of split `tag`: every `stride`-th pixel of each class in
/// scan order, where `stride` is the test stride for test and the train stride otherwise.
pub fn extract_patches(
    cube: Arc<HyperspectralCube>,
    mask: &LabelMask,
    assignment: &SplitAssignment,
    tag: SplitTag,
    spec: &PatchSpec,
    config: Arc<DataConfig>,
) -> Result<PatchSet> {
    spec.validate()?;
    let (w, h, _) = cube.dim();
    if mask.dim() != (w, h) {
        return Err(Error::Sampler(format!("mask {:?} does not match cube {:?}", mask.dim(), (w, h))));
    }
    let reach = (spec.size / 2) * spec.intra_dilation;
    if reach >= w || reach >= h {
        return Err(Error::Sampler(format!(
            "patch size {} (dilation {}) larger than twice the scene extent {w}x{h}",
            spec.size, spec.intra_dilation
        )));
    }
    let stride = spec.stride_for(tag);
    let mut units = Vec::new();
    let mut centers = Vec::new();
    let mut last_class = None;
    let mut k = 0usize;
    // units are sorted by (class, x, y), i.e. per-class scan order
    for u in assignment.get(tag) {
        let Unit::Pixel { class, x, y } = u else {
            return Err(Error::Sampler("patch extraction needs pixel units".into()));
        };
        let (x, y) = (*x as usize, *y as usize);
        if x >= w || y >= h || mask.get(x, y) != Some(*class) {
            return Err(Error::Sampler(format!(
                "unit {u:?} does not match the label mask; assignment built for another scene?"
            )));
        }
        if last_class != Some(*class) {
            last_class = Some(*class);
            k = 0;
        }
        if k.is_multiple_of(stride) {
            units.push(u.clone());
            centers.push((x, y, *class));
        }
        k += 1;
    }
    Ok(PatchSet { cube, units, centers, spec: spec.clone(), split: tag, config, class_count: mask.class_count() })
}

impl PatchSet {
    pub fn centers(&self) -> &[(usize, usize, u16)] {
        &self.centers
    }

    pub fn spec(&self) -> &PatchSpec {
        &self.spec
    }

    pub fn cube(&self) -> &Arc<HyperspectralCube> {
        &self.cube
    }
}

impl SampleSource for PatchSet {
    fn len(&self) -> usize {
        self.centers.len()
    }

    fn label(&self, i: usize) -> u16 {
        self.centers[i].2
    }

    fn unit(&self, i: usize) -> &Unit {
        &self.units[i]
    }

    fn split(&self) -> SplitTag {
        self.split
    }

    fn config(&self) -> &Arc<DataConfig> {
        &self.config
    }

    fn class_count(&self) -> usize {
        self.class_count
    }

    fn sample_shape(&self) -> [usize; 3] {
        [self.cube.bands(), self.spec.size, self.spec.size]
    }

    fn tensor(&self, i: usize) -> Array3<f32> {
        let (cx, cy, _) = self.centers[i];
        let (w, h, bands) = self.cube.dim();
        let s = self.spec.size;
        let half = (s / 2) as isize;
        let d = self.spec.intra_dilation as isize;
        let data = self.cube.data();
        let mut out = Array3::zeros((bands, s, s));
        for i in 0..s {
            let x = mirror_index(cx as isize + (i as isize - half) * d, w);
            for j in 0..s {
                let y = mirror_index(cy as isize + (j as isize - half) * d, h);
                let spectrum = data.slice(ndarray::s![x, y, ..]);
                for (b, v) in spectrum.iter().enumerate() {
                    out[[b, i, j]] = *v;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_matches_reflect_convention() {
        let got: Vec<usize> = (-3..8).map(|i| mirror_index(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(mirror_index(-2, 1), 0);
    }
}
