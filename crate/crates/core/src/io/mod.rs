//! Scene file adapters.
//!
//! Two containers are understood: ENVI (text header plus flat binary) and the
//! MATLAB level-5 files in which the HRSS scenes are distributed.

pub mod envi;
pub mod mat;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// A dense numeric array in column-major order, as read from a file.
#[derive(Clone, Debug, PartialEq)]
pub struct NumericArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NumericArray {
    /// Interpret a `rows x cols x bands` array as an `(x, y, λ)` cube with `x = row`.
    pub fn to_cube_data(&self) -> Result<Array3<f32>> {
        let (r, c, b) = match self.dims.as_slice() {
            [r, c, b] => (*r, *c, *b),
            [r, c] => (*r, *c, 1),
            d => {
                return Err(Error::InvalidCube(format!("array '{}' has {} dimensions, expected 3", self.name, d.len())))
            }
        };
        Ok(Array3::from_shape_fn((r, c, b), |(i, j, k)| self.data[i + r * (j + c * k)] as f32))
    }

    /// Interpret a `rows x cols` integer array as a label map.
    pub fn to_label_map(&self) -> Result<Array2<u16>> {
        let (r, c) = match self.dims.as_slice() {
            [r, c] => (*r, *c),
            d => {
                return Err(Error::InvalidMask(format!("array '{}' has {} dimensions, expected 2", self.name, d.len())))
            }
        };
        if let Some(v) = self.data.iter().find(|v| v.fract() != 0.0 || **v < 0.0 || **v > u16::MAX as f64) {
            return Err(Error::InvalidMask(format!("label value {v} in '{}' is not a u16 integer", self.name)));
        }
        Ok(Array2::from_shape_fn((r, c), |(i, j)| self.data[i + r * j] as u16))
    }
}
