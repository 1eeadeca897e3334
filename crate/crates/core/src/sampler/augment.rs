use ndarray::{s, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::object::resize_bilinear;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    pub p_flip: f64,
    pub p_rotate: f64,
    pub p_cut: f64,
    pub p_crop: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self { p_flip: 0.5, p_rotate: 0.5, p_cut: 0.5, p_crop: 0.1 }
    }
}

impl AugmentSpec {
    pub const NONE: Self = Self { p_flip: 0.0, p_rotate: 0.0, p_cut: 0.0, p_crop: 0.0 };

    pub fn validate(&self) -> crate::Result<()> {
        for p in [self.p_flip, self.p_rotate, self.p_cut, self.p_crop] {
            if !(0.0..=1.0).contains(&p) {
                return Err(crate::Error::Sampler(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlipAxis {
    Height,
    Width,
}

/// Which transforms fired.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugmentRecord {
    pub flipped: bool,
    pub rotated: bool,
    pub cut: bool,
    pub cropped: bool,
}

/// Mirror a `[C, H, W]` tensor along one spatial axis.
pub fn flip(x: &Array3<f32>, axis: FlipAxis) -> Array3<f32> {
    let v = match axis {
        FlipAxis::Height => x.slice(s![.., ..;-1, ..]),
        FlipAxis::Width => x.slice(s![.., .., ..;-1]),
    };
    v.to_owned()
}

/// Rotate a square `[C, H, W]` tensor by `k * 90` degrees.
pub fn rot90(x: &Array3<f32>, k: usize) -> Array3<f32> {
    let mut out = x.clone();
    for _ in 0..k % 4 {
        let mut t = out.view();
        t.swap_axes(1, 2);
        out = t.slice(s![.., .., ..;-1]).to_owned();
    }
    out
}

/// Apply random flip, rotation, cutout and crop to a `[C, H, W]` training tensor.
pub fn augment<R: Rng>(x: &Array3<f32>, spec: &AugmentSpec, rng: &mut R) -> (Array3<f32>, AugmentRecord) {
    let (_, h, w) = x.dim();
    let mut rec = AugmentRecord::default();
    let mut out = x.clone();
    // draw every decision up front so the stream layout does not depend on outcomes
    let u_flip: f64 = rng.random();
    let flip_axis = if rng.random::<bool>() { FlipAxis::Height } else { FlipAxis::Width };
    let u_rot: f64 = rng.random();
    let k = rng.random_range(1..4usize);
    let u_cut: f64 = rng.random();
    let cut_h = rng.random_range(1..=(h / 2).max(1));
    let cut_w = rng.random_range(1..=(w / 2).max(1));
    let cut_x = rng.random_range(0..=h - cut_h);
    let cut_y = rng.random_range(0..=w - cut_w);
    let u_crop: f64 = rng.random();
    let scale = rng.random_range(0.75..=1.0f64);
    let crop_h = ((scale * h as f64).ceil() as usize).clamp(1, h);
    let crop_w = ((scale * w as f64).ceil() as usize).clamp(1, w);
    let crop_x = rng.random_range(0..=h - crop_h);
    let crop_y = rng.random_range(0..=w - crop_w);

    if u_flip < spec.p_flip {
        out = flip(&out, flip_axis);
        rec.flipped = true;
    }
    if u_rot < spec.p_rotate && h == w {
        out = rot90(&out, k);
        rec.rotated = true;
    }
    if u_cut < spec.p_cut && h >= 2 && w >= 2 {
        out.slice_mut(s![.., cut_x..cut_x + cut_h, cut_y..cut_y + cut_w]).fill(0.0);
        rec.cut = true;
    }
    if u_crop < spec.p_crop {
        let window = out.slice(s![.., crop_x..crop_x + crop_h, crop_y..crop_y + crop_w]);
        // resize works on (x, y, λ)
        let xyl = window.permuted_axes([1, 2, 0]);
        let resized = resize_bilinear(xyl, h, w);
        out = resized.permuted_axes([2, 0, 1]).as_standard_layout().to_owned();
        rec.cropped = true;
    }
    debug_assert_eq!(out.len_of(Axis(0)), x.len_of(Axis(0)));
    (out, rec)
}
