//! Max and average pooling over 1, 2 or 3 spatial axes.

use ndarray::{Array5, ArrayD, Zip};

use crate::conv::{from5, to5, ConvGeom};
use crate::{empty_cache, take_cache, Cache, Layer, Mode, NnError, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    /// Padding counts toward the divisor.
    Avg,
}

pub struct Pool {
    pub kind: PoolKind,
    dims: usize,
    geom: ConvGeom,
}

struct MaxCache {
    in_shape: [usize; 5],
    argmax: Vec<usize>,
}

impl Pool {
    pub fn new(kind: PoolKind, dims: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        assert!((1..=3).contains(&dims), "pool dims must be 1, 2 or 3");
        Self { kind, dims, geom: ConvGeom::cubic(dims, kernel, stride, pad) }
    }

    pub fn with_geom(kind: PoolKind, dims: usize, geom: ConvGeom) -> Self {
        Self { kind, dims, geom }
    }

    /// Calls `f(output_flat, input_flat)` for each in-bounds window element of one plane.
    fn windows(&self, dims: [usize; 3], od: [usize; 3], mut f: impl FnMut(usize, usize)) {
        let g = &self.geom;
        for o0 in 0..od[0] {
            for o1 in 0..od[1] {
                for o2 in 0..od[2] {
                    let o = (o0 * od[1] + o1) * od[2] + o2;
                    for a in 0..g.kernel[0] {
                        let i0 = (o0 * g.stride[0] + a) as isize - g.pad[0] as isize;
                        if i0 < 0 || i0 as usize >= dims[0] {
                            continue;
                        }
                        for b in 0..g.kernel[1] {
                            let i1 = (o1 * g.stride[1] + b) as isize - g.pad[1] as isize;
                            if i1 < 0 || i1 as usize >= dims[1] {
                                continue;
                            }
                            for e in 0..g.kernel[2] {
                                let i2 = (o2 * g.stride[2] + e) as isize - g.pad[2] as isize;
                                if i2 < 0 || i2 as usize >= dims[2] {
                                    continue;
                                }
                                f(o, (i0 as usize * dims[1] + i1 as usize) * dims[2] + i2 as usize);
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<F: Scalar> Layer<F> for Pool {
    fn kind(&self) -> &'static str {
        match self.kind {
            PoolKind::Max => "max_pool",
            PoolKind::Avg => "avg_pool",
        }
    }

    fn forward(&mut self, x: ArrayD<F>, mode: Mode) -> Result<(ArrayD<F>, Cache)> {
        let x = to5(x, self.dims)?;
        let s = x.shape().to_vec();
        let (n, c) = (s[0], s[1]);
        let dims = [s[2], s[3], s[4]];
        let od = self.geom.out_dims(dims)?;
        let plane_out = od[0] * od[1] * od[2];
        let mut y = Array5::<F>::zeros((n, c, od[0], od[1], od[2]));
        let taps = F::lit(self.geom.taps() as f64);
        let mut argmax = vec![0usize; if self.kind == PoolKind::Max { n * c * plane_out } else { 0 }];
        let this = &*self;
        let planes_in = x.view().into_shape_with_order((n * c, dims[0] * dims[1] * dims[2])).expect("standard");
        let mut planes_out = y.view_mut().into_shape_with_order((n * c, plane_out)).expect("standard");
        match self.kind {
            PoolKind::Max => {
                let mut am = ndarray::ArrayViewMut2::from_shape((n * c, plane_out), &mut argmax).expect("len");
                Zip::from(planes_out.outer_iter_mut())
                    .and(planes_in.outer_iter())
                    .and(am.outer_iter_mut())
                    .par_for_each(|mut out, inp, mut am| {
                        let mut best = vec![F::zero(); plane_out];
                        let mut seen = vec![false; plane_out];
                        this.windows(dims, od, |o, i| {
                            if !seen[o] || inp[i] > best[o] {
                                seen[o] = true;
                                best[o] = inp[i];
                                am[o] = i;
                            }
                        });
                        out.assign(&ndarray::ArrayView1::from(&best));
                    });
            }
            PoolKind::Avg => {
                Zip::from(planes_out.outer_iter_mut()).and(planes_in.outer_iter()).par_for_each(|mut out, inp| {
                    this.windows(dims, od, |o, i| out[o] += inp[i]);
                    out.mapv_inplace(|v| v / taps);
                });
            }
        }
        let cache: Cache = match (mode, self.kind) {
            (Mode::Train, PoolKind::Max) => Box::new(MaxCache { in_shape: [n, c, dims[0], dims[1], dims[2]], argmax }),
            (Mode::Train, PoolKind::Avg) => Box::new([n, c, dims[0], dims[1], dims[2]]),
            _ => empty_cache(),
        };
        Ok((from5(y, self.dims), cache))
    }

    fn backward(&mut self, cache: Cache, grad: ArrayD<F>) -> Result<ArrayD<F>> {
        let g = to5(grad, self.dims)?;
        let (in_shape, argmax) = match self.kind {
            PoolKind::Max => {
                let c: MaxCache = take_cache(cache, "max_pool")?;
                (c.in_shape, Some(c.argmax))
            }
            PoolKind::Avg => (take_cache::<[usize; 5]>(cache, "avg_pool")?, None),
        };
        let [n, c, d0, d1, d2] = in_shape;
        let dims = [d0, d1, d2];
        let od = self.geom.out_dims(dims)?;
        let plane_out = od[0] * od[1] * od[2];
        if g.shape() != [n, c, od[0], od[1], od[2]] {
            return Err(NnError::Shape(format!("pool grad shape {:?}", g.shape())));
        }
        let mut dx = Array5::<F>::zeros(in_shape);
        let gp = g.view().into_shape_with_order((n * c, plane_out)).expect("standard");
        let mut dp = dx.view_mut().into_shape_with_order((n * c, d0 * d1 * d2)).expect("standard");
        match argmax {
            Some(am) => {
                for (p, (mut d, gr)) in dp.outer_iter_mut().zip(gp.outer_iter()).enumerate() {
                    for o in 0..plane_out {
                        d[am[p * plane_out + o]] += gr[o];
                    }
                }
            }
            None => {
                let taps = F::lit(self.geom.taps() as f64);
                for (mut d, gr) in dp.outer_iter_mut().zip(gp.outer_iter()) {
                    self.windows(dims, od, |o, i| d[i] += gr[o] / taps);
                }
            }
        }
        Ok(from5(dx, self.dims))
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != self.dims + 1 {
            return Err(NnError::Shape(format!("pool{}d cannot take per-sample shape {input:?}", self.dims)));
        }
        let mut sp = [1; 3];
        sp[3 - self.dims..].copy_from_slice(&input[1..]);
        let od = self.geom.out_dims(sp)?;
        let mut out = vec![input[0]];
        out.extend_from_slice(&od[3 - self.dims..]);
        Ok(out)
    }
}
