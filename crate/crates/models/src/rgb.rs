//! Loading an externally trained RGB backbone into a hyperspectral model.
//!
//! The first convolution of an RGB network has weights [O, 3, k, k]. Each
//! band takes the slice of the colour channel its wavelength falls in
//! (blue below 500 nm, green below 600 nm, red above, near infrared included)
//! and is scaled by 3 / bands so activations keep their magnitude.

use hsi_nn::{Layer, TensorMut};
use ndarray::{s, Array4, ArrayD, ArrayView4, Ix4};

use crate::model::BackboneHeadModel;
use crate::{ModelError, Result};

/// Index into an RGB-ordered input channel axis.
pub fn rgb_channel(wavelength_nm: f64) -> usize {
    if wavelength_nm < 500.0 {
        2
    } else if wavelength_nm < 600.0 {
        1
    } else {
        0
    }
}

pub fn adapt_rgb_kernel(rgb: ArrayView4<f32>, wavelengths_nm: &[f64]) -> Result<Array4<f32>> {
    let (o, c, kh, kw) = rgb.dim();
    if c != 3 {
        return Err(ModelError::Incompatible(format!("RGB kernel has {c} input channels")));
    }
    if wavelengths_nm.is_empty() {
        return Err(ModelError::Incompatible("empty wavelength grid".into()));
    }
    let scale = 3.0 / wavelengths_nm.len() as f32;
    let mut out = Array4::<f32>::zeros((o, wavelengths_nm.len(), kh, kw));
    for (b, &w) in wavelengths_nm.iter().enumerate() {
        let src = rgb.slice(s![.., rgb_channel(w), .., ..]);
        out.slice_mut(s![.., b, .., ..]).assign(&(&src * scale));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbLoadReport {
    /// Tensors copied by name.
    pub loaded: usize,
    /// Whether the first convolution was adapted from the RGB kernel.
    pub stem_adapted: bool,
}

/// Copies `state` (names relative to the backbone body, e.g. `0.weight`) into
/// the model. For channel-stem models the first body layer must be the RGB
/// kernel and is adapted to `wavelengths_nm`; wavelength stems keep their
/// initialisation. Heads are left untouched.
pub fn load_rgb_backbone(
    model: &mut BackboneHeadModel,
    state: &[(String, ArrayD<f32>)],
    wavelengths_nm: &[f64],
) -> Result<RgbLoadReport> {
    let hyve = model.is_wavelength_based();
    let mut map: std::collections::HashMap<&str, &ArrayD<f32>> = state.iter().map(|(k, v)| (k.as_str(), v)).collect();
    let mut adapted = None;
    if !hyve {
        let w = map
            .remove("0.weight")
            .ok_or_else(|| ModelError::Checkpoint("RGB state lacks the first convolution 0.weight".into()))?;
        let w4 = w
            .view()
            .into_dimensionality::<Ix4>()
            .map_err(|_| ModelError::Incompatible(format!("first convolution has shape {:?}", w.shape())))?;
        adapted = Some(adapt_rgb_kernel(w4, wavelengths_nm)?.into_dyn());
    }
    let mut loaded = 0;
    let mut err = None;
    model.body_mut().visit_mut("", &mut |name, t| {
        if err.is_some() {
            return;
        }
        let dst = match t {
            TensorMut::Param(p) => &mut p.value,
            TensorMut::Buffer(b) => b,
        };
        let src = match (name, &adapted) {
            ("0.weight", Some(a)) => a,
            _ => match map.get(name) {
                Some(v) => *v,
                None => {
                    err = Some(ModelError::Checkpoint(format!("RGB state lacks {name}")));
                    return;
                }
            },
        };
        if dst.shape() != src.shape() {
            err = Some(ModelError::Incompatible(format!("{name}: model {:?} vs RGB {:?}", dst.shape(), src.shape())));
            return;
        }
        dst.assign(src);
        loaded += 1;
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(RgbLoadReport { loaded, stem_adapted: adapted.is_some() })
}
