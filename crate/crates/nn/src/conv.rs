//! N-d convolution (N = 1, 2, 3) via im2col and GEMM on a shared 5-d core.

use ndarray::{Array1, Array2, Array5, ArrayD, ArrayView1, ArrayView2, ArrayView5, Axis, IxDyn};
use rand::Rng;
use rayon::prelude::*;

use crate::{
    check_rank, empty_cache, init, join, take_cache, Cache, Layer, Mode, NnError, Param, Result, Scalar, Tensor,
    TensorMut, Visitor, VisitorMut,
};

/// Column budget of one GEMM. Samples are grouped so that a group spans about
/// this many output positions; group sizes depend only on shapes, and weight
/// gradients are summed group by group in order, so results do not depend on
/// thread count.
const GEMM_COLS: usize = 256;
const MAX_GROUP: usize = 32;

fn groups(n: usize, l: usize) -> Vec<std::ops::Range<usize>> {
    let m = (GEMM_COLS / l.max(1)).clamp(1, MAX_GROUP);
    (0..n).step_by(m).map(|a| a..(a + m).min(n)).collect()
}

/// Kernel, stride and zero padding over the (depth, height, width) axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    /// Geometry for a `dims`-d convolution with a cubic kernel; leading unused axes get size 1.
    pub fn cubic(dims: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        let mut g = ConvGeom { kernel: [1; 3], stride: [1; 3], pad: [0; 3] };
        for i in 3 - dims..3 {
            g.kernel[i] = kernel;
            g.stride[i] = stride;
            g.pad[i] = pad;
        }
        g
    }

    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn out_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for i in 0..3 {
            let padded = input[i] + 2 * self.pad[i];
            if self.stride[i] == 0 || self.kernel[i] == 0 {
                return Err(NnError::Invalid("kernel and stride must be positive".into()));
            }
            if self.kernel[i] > padded {
                return Err(NnError::Shape(format!(
                    "kernel {:?} exceeds padded input extent {:?}",
                    self.kernel, input
                )));
            }
            out[i] = (padded - self.kernel[i]) / self.stride[i] + 1;
        }
        Ok(out)
    }
}

fn src_index(o: usize, k: usize, s: usize, p: usize, n: usize) -> Option<usize> {
    let i = (o * s + k) as isize - p as isize;
    (i >= 0 && (i as usize) < n).then_some(i as usize)
}

/// Lays out receptive fields as columns: rows are (channel, kd, kh, kw), columns output positions.
pub fn im2col<F: Scalar>(x: &[F], channels: usize, dims: [usize; 3], g: &ConvGeom, od: [usize; 3]) -> Array2<F> {
    let l = od[0] * od[1] * od[2];
    let rows = channels * g.taps();
    let mut col = vec![F::zero(); rows * l];
    im2col_into(x, channels, dims, g, od, &mut col, l, 0);
    Array2::from_shape_vec((rows, l), col).expect("im2col shape")
}

/// `im2col` into a zeroed row-major buffer with row stride `ld`, starting at column `offset`.
#[allow(clippy::too_many_arguments)]
fn im2col_into<F: Scalar>(
    x: &[F],
    channels: usize,
    dims: [usize; 3],
    g: &ConvGeom,
    od: [usize; 3],
    col: &mut [F],
    ld: usize,
    offset: usize,
) {
    let [k0, k1, k2] = g.kernel;
    let l = od[0] * od[1] * od[2];
    for ci in 0..channels {
        for a in 0..k0 {
            for b in 0..k1 {
                for e in 0..k2 {
                    let row = ((ci * k0 + a) * k1 + b) * k2 + e;
                    let dst = &mut col[row * ld + offset..row * ld + offset + l];
                    for o0 in 0..od[0] {
                        let Some(i0) = src_index(o0, a, g.stride[0], g.pad[0], dims[0]) else { continue };
                        for o1 in 0..od[1] {
                            let Some(i1) = src_index(o1, b, g.stride[1], g.pad[1], dims[1]) else { continue };
                            let src_base = ((ci * dims[0] + i0) * dims[1] + i1) * dims[2];
                            let dst_base = (o0 * od[1] + o1) * od[2];
                            for o2 in 0..od[2] {
                                if let Some(i2) = src_index(o2, e, g.stride[2], g.pad[2], dims[2]) {
                                    dst[dst_base + o2] = x[src_base + i2];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Columns of the samples `range` side by side: [C * taps, |range| * L].
fn group_cols<F: Scalar>(x: &ArrayView5<F>, range: std::ops::Range<usize>, g: &ConvGeom, od: [usize; 3]) -> Array2<F> {
    let c = x.shape()[1];
    let dims = spatial(x);
    let l = od[0] * od[1] * od[2];
    let rows = c * g.taps();
    let ld = range.len() * l;
    let mut col = vec![F::zero(); rows * ld];
    for (j, s) in range.enumerate() {
        let x_n = x.index_axis(Axis(0), s);
        im2col_into(x_n.as_slice().expect("standard layout"), c, dims, g, od, &mut col, ld, j * l);
    }
    Array2::from_shape_vec((rows, ld), col).expect("group columns")
}

/// Adjoint of `im2col`: scatters column gradients back onto the input grid.
pub fn col2im<F: Scalar>(
    col: ArrayView2<F>,
    channels: usize,
    dims: [usize; 3],
    g: &ConvGeom,
    od: [usize; 3],
) -> Vec<F> {
    let [k0, k1, k2] = g.kernel;
    let col = col.as_standard_layout();
    let col = col.as_slice().expect("standard layout");
    let l = od[0] * od[1] * od[2];
    let mut x = vec![F::zero(); channels * dims[0] * dims[1] * dims[2]];
    for ci in 0..channels {
        for a in 0..k0 {
            for b in 0..k1 {
                for e in 0..k2 {
                    let row = ((ci * k0 + a) * k1 + b) * k2 + e;
                    let src = &col[row * l..(row + 1) * l];
                    for o0 in 0..od[0] {
                        let Some(i0) = src_index(o0, a, g.stride[0], g.pad[0], dims[0]) else { continue };
                        for o1 in 0..od[1] {
                            let Some(i1) = src_index(o1, b, g.stride[1], g.pad[1], dims[1]) else { continue };
                            let dst_base = ((ci * dims[0] + i0) * dims[1] + i1) * dims[2];
                            let src_base = (o0 * od[1] + o1) * od[2];
                            for o2 in 0..od[2] {
                                if let Some(i2) = src_index(o2, e, g.stride[2], g.pad[2], dims[2]) {
                                    x[dst_base + i2] += src[src_base + o2];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

fn spatial(x: &ArrayView5<impl Scalar>) -> [usize; 3] {
    let s = x.shape();
    [s[2], s[3], s[4]]
}

/// `x`: [N, C, D, H, W]; `w`: [O, C * taps]. Returns [N, O, D', H', W'].
pub fn conv_forward<F: Scalar>(
    x: ArrayView5<F>,
    w: ArrayView2<F>,
    bias: Option<ArrayView1<F>>,
    g: &ConvGeom,
) -> Result<Array5<F>> {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let dims = spatial(&x);
    let od = g.out_dims(dims)?;
    let o = w.shape()[0];
    if w.shape()[1] != c * g.taps() {
        return Err(NnError::Shape(format!(
            "weight has {} columns, input needs {} channels x {} taps",
            w.shape()[1],
            c,
            g.taps()
        )));
    }
    let l = od[0] * od[1] * od[2];
    let x = x.as_standard_layout();
    let xv = x.view();
    let parts: Vec<Array2<F>> = groups(n, l)
        .into_par_iter()
        .map(|r| {
            let mut y = w.dot(&group_cols(&xv, r, g, od));
            if let Some(b) = &bias {
                y += &b.view().insert_axis(Axis(1));
            }
            y
        })
        .collect();
    let mut out = Array5::<F>::zeros((n, o, od[0], od[1], od[2]));
    let mut flat = out.view_mut().into_shape_with_order((n, o, l)).expect("contiguous output");
    let mut s0 = 0;
    for y in parts {
        let m = y.shape()[1] / l;
        for j in 0..m {
            flat.index_axis_mut(Axis(0), s0 + j).assign(&y.slice(ndarray::s![.., j * l..(j + 1) * l]));
        }
        s0 += m;
    }
    Ok(out)
}

pub struct ConvGrads<F> {
    pub dx: Option<Array5<F>>,
    pub dw: Array2<F>,
    pub db: Array1<F>,
}

pub fn conv_backward<F: Scalar>(
    x: ArrayView5<F>,
    w: ArrayView2<F>,
    grad: ArrayView5<F>,
    g: &ConvGeom,
    need_dx: bool,
) -> Result<ConvGrads<F>> {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let dims = spatial(&x);
    let od = g.out_dims(dims)?;
    let o = w.shape()[0];
    let l = od[0] * od[1] * od[2];
    if grad.shape() != [n, o, od[0], od[1], od[2]] {
        return Err(NnError::Shape(format!("conv grad shape {:?}", grad.shape())));
    }
    let x = x.as_standard_layout();
    let grad = grad.as_standard_layout();
    let wt = w.t();
    let gv = grad.view().into_shape_with_order((n, o, l)).expect("contiguous grad");
    let xv = x.view();
    let parts: Vec<(Array2<F>, Vec<Vec<F>>)> = groups(n, l)
        .into_par_iter()
        .map(|r| {
            let m = r.len();
            let col = group_cols(&xv, r.clone(), g, od);
            let mut gcat = Array2::<F>::zeros((o, m * l));
            for (j, s) in r.enumerate() {
                gcat.slice_mut(ndarray::s![.., j * l..(j + 1) * l]).assign(&gv.index_axis(Axis(0), s));
            }
            let dw = gcat.dot(&col.t());
            let mut dxs = Vec::new();
            if need_dx {
                let dcol = wt.dot(&gcat);
                for j in 0..m {
                    dxs.push(col2im(dcol.slice(ndarray::s![.., j * l..(j + 1) * l]), c, dims, g, od));
                }
            }
            (dw, dxs)
        })
        .collect();
    let mut dw = Array2::<F>::zeros(w.raw_dim());
    let mut dx_flat = Vec::with_capacity(if need_dx { x.len() } else { 0 });
    for (part, dxs) in parts {
        dw += &part;
        for d in dxs {
            dx_flat.extend(d);
        }
    }
    let db = grad.sum_axis(Axis(4)).sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
    let dx = need_dx.then(|| Array5::from_shape_vec(x.raw_dim(), dx_flat).expect("dx shape"));
    Ok(ConvGrads { dx, dw, db })
}

/// Views an input of rank `dims + 2` as [N, C, D, H, W].
pub(crate) fn to5<F: Scalar>(x: ArrayD<F>, dims: usize) -> Result<Array5<F>> {
    check_rank(&x, dims + 2, "conv")?;
    let s = x.shape().to_vec();
    let mut shape = [s[0], s[1], 1, 1, 1];
    shape[5 - dims..].copy_from_slice(&s[2..]);
    let x = if x.is_standard_layout() { x } else { x.as_standard_layout().into_owned() };
    x.into_shape_with_order(shape).map_err(|e| NnError::Shape(e.to_string()))
}

pub(crate) fn from5<F: Scalar>(x: Array5<F>, dims: usize) -> ArrayD<F> {
    let s = x.shape().to_vec();
    let mut shape = vec![s[0], s[1]];
    shape.extend_from_slice(&s[5 - dims..]);
    x.into_shape_with_order(IxDyn(&shape)).expect("standard layout")
}

pub(crate) fn per_sample_out(
    g: &ConvGeom,
    dims: usize,
    in_ch: usize,
    out_ch: usize,
    input: &[usize],
) -> Result<Vec<usize>> {
    if input.len() != dims + 1 || input[0] != in_ch {
        return Err(NnError::Shape(format!(
            "conv{dims}d with {in_ch} input channels cannot take per-sample shape {input:?}"
        )));
    }
    let mut sp = [1; 3];
    sp[3 - dims..].copy_from_slice(&input[1..]);
    let od = g.out_dims(sp)?;
    let mut out = vec![out_ch];
    out.extend_from_slice(&od[3 - dims..]);
    Ok(out)
}

/// Standard convolution over 1, 2 or 3 spatial axes.
pub struct Conv<F> {
    dims: usize,
    in_ch: usize,
    out_ch: usize,
    geom: ConvGeom,
    pub weight: Param<F>,
    pub bias: Option<Param<F>>,
    /// Skip the input gradient (first layer of a network).
    pub input_grad: bool,
}

impl<F: Scalar> Conv<F> {
    pub fn new<R: Rng + ?Sized>(
        dims: usize,
        in_ch: usize,
        out_ch: usize,
        geom: ConvGeom,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        assert!((1..=3).contains(&dims), "conv dims must be 1, 2 or 3");
        let fan_in = in_ch * geom.taps();
        let mut shape = vec![out_ch, in_ch];
        shape.extend_from_slice(&geom.kernel[3 - dims..]);
        let weight = Param::new(init::he_uniform(&shape, fan_in, rng));
        let bias = bias.then(|| Param::new(init::bias_uniform(out_ch, fan_in, rng)));
        Self { dims, in_ch, out_ch, geom, weight, bias, input_grad: true }
    }

    pub fn geom(&self) -> &ConvGeom {
        &self.geom
    }

    pub fn channels(&self) -> (usize, usize) {
        (self.in_ch, self.out_ch)
    }

    fn weight2(&self) -> ArrayView2<'_, F> {
        self.weight
            .value
            .view()
            .into_shape_with_order((self.out_ch, self.in_ch * self.geom.taps()))
            .expect("weight is contiguous")
    }
}

impl<F: Scalar> Layer<F> for Conv<F> {
    fn kind(&self) -> &'static str {
        "conv"
    }

    fn forward(&mut self, x: ArrayD<F>, mode: Mode) -> Result<(ArrayD<F>, Cache)> {
        let x5 = to5(x, self.dims)?;
        if x5.shape()[1] != self.in_ch {
            return Err(NnError::Shape(format!("conv expects {} channels, got {}", self.in_ch, x5.shape()[1])));
        }
        let y = conv_forward(
            x5.view(),
            self.weight2(),
            self.bias.as_ref().map(|b| b.value.view().into_dimensionality().expect("rank 1")),
            &self.geom,
        )?;
        let cache: Cache = if mode == Mode::Train { Box::new(x5) } else { empty_cache() };
        Ok((from5(y, self.dims), cache))
    }

    fn backward(&mut self, cache: Cache, grad: ArrayD<F>) -> Result<ArrayD<F>> {
        let x5: Array5<F> = take_cache(cache, "conv")?;
        let g5 = to5(grad, self.dims)?;
        let gr = conv_backward(x5.view(), self.weight2(), g5.view(), &self.geom, self.input_grad)?;
        let dw = gr.dw.into_shape_with_order(self.weight.value.raw_dim()).expect("dw shape");
        self.weight.accumulate(dw.view());
        if let Some(b) = &mut self.bias {
            b.accumulate(gr.db.into_dyn().view());
        }
        Ok(match gr.dx {
            Some(dx) => from5(dx, self.dims),
            None => ArrayD::zeros(IxDyn(&[0])),
        })
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        per_sample_out(&self.geom, self.dims, self.in_ch, self.out_ch, input)
    }

    fn visit(&self, prefix: &str, f: &mut Visitor<'_, F>) {
        f(&join(prefix, "weight"), Tensor::Param(&self.weight));
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), Tensor::Param(b));
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, F>) {
        f(&join(prefix, "weight"), TensorMut::Param(&mut self.weight));
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), TensorMut::Param(b));
        }
    }
}
