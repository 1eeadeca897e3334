//! Single-layer GRU returning the last hidden state.
//!
//! Gate order and the reset-gate placement follow the common
//! `n = tanh(W_in x + b_in + r * (W_hn h + b_hn))` form.

use ndarray::{s, Array2, Array3, ArrayD, Axis, Ix3};
use rand::Rng;

use crate::{
    init, join, take_cache, Cache, Layer, Mode, NnError, Param, Result, Scalar, Tensor, TensorMut, Visitor, VisitorMut,
};

pub struct Gru<F> {
    input: usize,
    hidden: usize,
    /// [3H, I], gates stacked as (r, z, n).
    pub weight_ih: Param<F>,
    /// [3H, H].
    pub weight_hh: Param<F>,
    pub bias_ih: Param<F>,
    pub bias_hh: Param<F>,
}

struct Step<F> {
    h_prev: Array2<F>,
    r: Array2<F>,
    z: Array2<F>,
    n: Array2<F>,
    hn: Array2<F>,
}

struct GruCache<F> {
    x: Array3<F>,
    steps: Vec<Step<F>>,
}

fn sigmoid<F: Scalar>(v: F) -> F {
    F::one() / (F::one() + (-v).exp())
}

impl<F: Scalar> Gru<F> {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let b = 1.0 / (hidden as f64).sqrt();
        Self {
            input,
            hidden,
            weight_ih: Param::new(init::uniform(&[3 * hidden, input], b, rng)),
            weight_hh: Param::new(init::uniform(&[3 * hidden, hidden], b, rng)),
            bias_ih: Param::new(init::uniform(&[3 * hidden], b, rng)),
            bias_hh: Param::new(init::uniform(&[3 * hidden], b, rng)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn mats(
        &self,
    ) -> (ndarray::ArrayView2<'_, F>, ndarray::ArrayView2<'_, F>, ndarray::ArrayView1<'_, F>, ndarray::ArrayView1<'_, F>)
    {
        (
            self.weight_ih.value.view().into_dimensionality().expect("rank 2"),
            self.weight_hh.value.view().into_dimensionality().expect("rank 2"),
            self.bias_ih.value.view().into_dimensionality().expect("rank 1"),
            self.bias_hh.value.view().into_dimensionality().expect("rank 1"),
        )
    }
}

impl<F: Scalar> Layer<F> for Gru<F> {
    fn kind(&self) -> &'static str {
        "gru"
    }

    /// `x`: [N, T, I] -> [N, H].
    fn forward(&mut self, x: ArrayD<F>, mode: Mode) -> Result<(ArrayD<F>, Cache)> {
        let x: Array3<F> =
            x.into_dimensionality::<Ix3>().map_err(|_| NnError::Shape("gru expects [N, T, I]".into()))?;
        let (n, t, i) = x.dim();
        if i != self.input {
            return Err(NnError::Shape(format!("gru expects {} inputs per step, got {i}", self.input)));
        }
        let hd = self.hidden;
        let (wih, whh, bih, bhh) = self.mats();
        let mut h = Array2::<F>::zeros((n, hd));
        let mut steps = Vec::with_capacity(if mode == Mode::Train { t } else { 0 });
        for step in 0..t {
            let xt = x.index_axis(Axis(1), step);
            let gi = xt.dot(&wih.t()) + bih;
            let gh = h.dot(&whh.t()) + bhh;
            let r = (&gi.slice(s![.., 0..hd]) + &gh.slice(s![.., 0..hd])).mapv(sigmoid);
            let z = (&gi.slice(s![.., hd..2 * hd]) + &gh.slice(s![.., hd..2 * hd])).mapv(sigmoid);
            let hn = gh.slice(s![.., 2 * hd..]).to_owned();
            let nn = (&gi.slice(s![.., 2 * hd..]) + &(&r * &hn)).mapv(|v| v.tanh());
            let h_next = &nn + &(&z * &(&h - &nn));
            if mode == Mode::Train {
                steps.push(Step { h_prev: h, r, z, n: nn, hn });
            }
            h = h_next;
        }
        let cache: Cache = if mode == Mode::Train { Box::new(GruCache { x, steps }) } else { crate::empty_cache() };
        Ok((h.into_dyn(), cache))
    }

    fn backward(&mut self, cache: Cache, grad: ArrayD<F>) -> Result<ArrayD<F>> {
        let GruCache { x, steps } = take_cache::<GruCache<F>>(cache, "gru")?;
        let hd = self.hidden;
        let n = x.dim().0;
        let mut dh: Array2<F> =
            grad.into_dimensionality().map_err(|_| NnError::Shape("gru grad must be [N, H]".into()))?;
        let (wih, whh, _, _) = self.mats();
        let mut dwih = Array2::<F>::zeros(wih.raw_dim());
        let mut dwhh = Array2::<F>::zeros(whh.raw_dim());
        let mut dbih = ndarray::Array1::<F>::zeros(3 * hd);
        let mut dbhh = ndarray::Array1::<F>::zeros(3 * hd);
        let mut dx = Array3::<F>::zeros(x.raw_dim());
        let one = F::one();
        for (step, st) in steps.iter().enumerate().rev() {
            let dn = &dh * &st.z.mapv(|z| one - z);
            let dz = &dh * &(&st.h_prev - &st.n);
            let dh_prev_direct = &dh * &st.z;
            let dn_pre = &dn * &st.n.mapv(|v| one - v * v);
            let dr = &dn_pre * &st.hn;
            let dr_pre = &dr * &st.r.mapv(|r| r * (one - r));
            let dz_pre = &dz * &st.z.mapv(|z| z * (one - z));
            let mut d_i = Array2::<F>::zeros((n, 3 * hd));
            d_i.slice_mut(s![.., 0..hd]).assign(&dr_pre);
            d_i.slice_mut(s![.., hd..2 * hd]).assign(&dz_pre);
            d_i.slice_mut(s![.., 2 * hd..]).assign(&dn_pre);
            let mut d_h = d_i.clone();
            d_h.slice_mut(s![.., 2 * hd..]).assign(&(&dn_pre * &st.r));
            let xt = x.index_axis(Axis(1), step);
            dwih += &d_i.t().dot(&xt);
            dbih += &d_i.sum_axis(Axis(0));
            dx.index_axis_mut(Axis(1), step).assign(&d_i.dot(&wih));
            dwhh += &d_h.t().dot(&st.h_prev);
            dbhh += &d_h.sum_axis(Axis(0));
            dh = dh_prev_direct + d_h.dot(&whh);
        }
        self.weight_ih.accumulate(dwih.into_dyn().view());
        self.weight_hh.accumulate(dwhh.into_dyn().view());
        self.bias_ih.accumulate(dbih.into_dyn().view());
        self.bias_hh.accumulate(dbhh.into_dyn().view());
        Ok(dx.into_dyn())
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 2 || input[1] != self.input {
            return Err(NnError::Shape(format!("gru cannot take per-sample shape {input:?}")));
        }
        Ok(vec![self.hidden])
    }

    fn visit(&self, prefix: &str, f: &mut Visitor<'_, F>) {
        f(&join(prefix, "weight_ih"), Tensor::Param(&self.weight_ih));
        f(&join(prefix, "weight_hh"), Tensor::Param(&self.weight_hh));
        f(&join(prefix, "bias_ih"), Tensor::Param(&self.bias_ih));
        f(&join(prefix, "bias_hh"), Tensor::Param(&self.bias_hh));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, F>) {
        f(&join(prefix, "weight_ih"), TensorMut::Param(&mut self.weight_ih));
        f(&join(prefix, "weight_hh"), TensorMut::Param(&mut self.weight_hh));
        f(&join(prefix, "bias_ih"), TensorMut::Param(&mut self.bias_ih));
        f(&join(prefix, "bias_hh"), TensorMut::Param(&mut self.bias_hh));
    }
}
