use std::sync::Arc;

use ndarray::{Array3, ArrayView3};

use super::SampleSource;
use crate::cube::{DataConfig, HyperspectralCube, Recording};
use crate::error::{Error, Result};
use crate::splits::{SplitAssignment, SplitTag, Unit};

/// Spatial size of objectwise samples.
pub const OBJECT_SIZE: usize = 128;

/// Per-band bilinear resize of an `(x, y, λ)` array, half-pixel centers
/// (`align_corners = false`), source coordinates clamped to the border.
pub fn resize_bilinear(src: ArrayView3<'_, f32>, out_x: usize, out_y: usize) -> Array3<f32> {
    let (w, h, bands) = src.dim();
    if (w, h) == (out_x, out_y) {
        return src.to_owned();
    }
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let ax = axis(w, out_x);
    let ay = axis(h, out_y);
    let mut out = Array3::zeros((out_x, out_y, bands));
    for (i, &(x0, x1, fx)) in ax.iter().enumerate() {
        for (j, &(y0, y1, fy)) in ay.iter().enumerate() {
            for b in 0..bands {
                let top = src[[x0, y0, b]] * (1.0 - fy) + src[[x0, y1, b]] * fy;
                let bot = src[[x1, y0, b]] * (1.0 - fy) + src[[x1, y1, b]] * fy;
                out[[i, j, b]] = top * (1.0 - fx) + bot * fx;
            }
        }
    }
    out
}

/// Resize a whole recording to `target x target` and lay it out channel-first.
pub fn objectwise_view(cube: &HyperspectralCube, target: usize) -> Result<Array3<f32>> {
    let (w, h, _) = cube.dim();
    if w == 0 || h == 0 || target == 0 {
        return Err(Error::Sampler("empty recording".into()));
    }
    let r = resize_bilinear(cube.data().view(), target, target);
    Ok(r.permuted_axes([2, 0, 1]).as_standard_layout().to_owned())
}

/// Recordings of one split, each resized on access.
#[derive(Clone, Debug)]
pub struct RecordSet {
    recordings: Vec<Arc<HyperspectralCube>>,
    labels: Vec<u16>,
    units: Vec<Unit>,
    target: usize,
    split: SplitTag,
    config: Arc<DataConfig>,
    class_count: usize,
}

impl RecordSet {
    /// Recordings whose id is in split `tag` of `assignment`, in assignment order.
    pub fn new(
        recordings: &[Recording],
        assignment: &SplitAssignment,
        tag: SplitTag,
        class_count: usize,
        target: usize,
        config: Arc<DataConfig>,
    ) -> Result<Self> {
        let mut set = Self {
            recordings: Vec::new(),
            labels: Vec::new(),
            units: Vec::new(),
            target,
            split: tag,
            config,
            class_count,
        };
        let bands = recordings.first().map(|r| r.cube.bands());
        for u in assignment.get(tag) {
            let Unit::Record { id } = u else {
                return Err(Error::Sampler("objectwise sets need record units".into()));
            };
            let r = recordings
                .iter()
                .find(|r| &r.id == id)
                .ok_or_else(|| Error::Sampler(format!("record '{id}' has no recording")))?;
            if Some(r.cube.bands()) != bands {
                return Err(Error::Sampler(format!("record '{id}' has a different band count")));
            }
            if r.label as usize >= class_count {
                return Err(Error::Sampler(format!("record '{id}' label {} out of range", r.label)));
            }
            set.recordings.push(Arc::new(r.cube.clone()));
            set.labels.push(r.label);
            set.units.push(u.clone());
        }
        Ok(set)
    }
}

impl SampleSource for RecordSet {
    fn len(&self) -> usize {
        self.recordings.len()
    }

    fn label(&self, i: usize) -> u16 {
        self.labels[i]
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
        let bands = self.recordings.first().map_or(0, |r| r.bands());
        [bands, self.target, self.target]
    }

    fn tensor(&self, i: usize) -> Array3<f32> {
        objectwise_view(&self.recordings[i], self.target).expect("validated recording")
    }
}
