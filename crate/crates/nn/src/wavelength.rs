//! First-layer convolution whose per-band weights are generated from band
//! wavelengths, so one set of parameters serves any camera grid inside its range.
//!
//! kernel[f, b, i, j] = sum_g exp(-(p_b - mu[f, g])^2 / (2 sigma[f, g]^2)) * taps[f, g, i, j]
//! with p_b the band wavelength mapped linearly from `range_nm` onto [0, 1].

use ndarray::{Array2, Array3, Array4, Array5, ArrayD, Axis, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conv::{conv_backward, conv_forward, from5, per_sample_out, to5, ConvGeom};
use crate::{
    empty_cache, init, join, take_cache, Cache, Layer, Mode, NnError, Param, Result, Scalar, Tensor, TensorMut,
    Visitor, VisitorMut,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavelengthConvConfig {
    pub filters: usize,
    pub components: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub range_nm: (f64, f64),
    pub sigma_init: f64,
    pub sigma_min: f64,
    pub bias: bool,
}

impl WavelengthConvConfig {
    pub fn new(filters: usize, kernel: usize, range_nm: (f64, f64)) -> Self {
        Self {
            filters,
            components: 5,
            kernel,
            stride: 1,
            pad: kernel / 2,
            range_nm,
            sigma_init: 0.2,
            sigma_min: 0.01,
            bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.range_nm;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(NnError::Invalid(format!("wavelength range {lo}..{hi} is empty")));
        }
        if self.filters == 0 || self.components == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(NnError::Invalid("filters, components, kernel and stride must be positive".into()));
        }
        if self.sigma_min <= 0.0 || self.sigma_init < self.sigma_min {
            return Err(NnError::Invalid("sigma_init must be at least sigma_min > 0".into()));
        }
        Ok(())
    }
}

pub struct WavelengthConv<F> {
    cfg: WavelengthConvConfig,
    /// [filters, components, k, k].
    pub taps: Param<F>,
    /// [filters, components], normalised wavelength centres.
    pub mu: Param<F>,
    /// [filters, components], clamped below at `sigma_min` when used.
    pub sigma: Param<F>,
    pub bias: Option<Param<F>>,
    positions: Vec<f64>,
    pub input_grad: bool,
}

impl<F: Scalar> WavelengthConv<F> {
    pub fn new<R: Rng + ?Sized>(cfg: WavelengthConvConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (f, g, k) = (cfg.filters, cfg.components, cfg.kernel);
        let fan_in = g * k * k;
        let taps = Param::new(init::he_uniform(&[f, g, k, k], fan_in, rng));
        let mu = ArrayD::from_shape_fn(IxDyn(&[f, g]), |ix| {
            F::lit(if g == 1 { 0.5 } else { ix[1] as f64 / (g - 1) as f64 })
        });
        let sigma = ArrayD::from_elem(IxDyn(&[f, g]), F::lit(cfg.sigma_init));
        let bias = cfg.bias.then(|| Param::new(init::bias_uniform(f, fan_in, rng)));
        Ok(Self {
            cfg,
            taps,
            mu: Param::new(mu),
            sigma: Param::new(sigma),
            bias,
            positions: Vec::new(),
            input_grad: true,
        })
    }

    pub fn config(&self) -> &WavelengthConvConfig {
        &self.cfg
    }

    fn geom(&self) -> ConvGeom {
        ConvGeom::cubic(2, self.cfg.kernel, self.cfg.stride, self.cfg.pad)
    }

    /// Maps wavelengths onto [0, 1]; fails on any wavelength outside the range.
    pub fn normalise(&self, wavelengths_nm: &[f64]) -> Result<Vec<f64>> {
        let (lo, hi) = self.cfg.range_nm;
        let outside: Vec<f64> =
            wavelengths_nm.iter().copied().filter(|w| !w.is_finite() || *w < lo || *w > hi).collect();
        if !outside.is_empty() {
            return Err(NnError::Invalid(format!("wavelengths outside {lo}..{hi} nm: {outside:?}")));
        }
        if wavelengths_nm.is_empty() {
            return Err(NnError::Invalid("empty wavelength grid".into()));
        }
        Ok(wavelengths_nm.iter().map(|w| (w - lo) / (hi - lo)).collect())
    }

    /// Binds the layer to a camera grid; subsequent inputs must have one channel per band.
    pub fn set_grid(&mut self, wavelengths_nm: &[f64]) -> Result<()> {
        self.positions = self.normalise(wavelengths_nm)?;
        Ok(())
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    fn sigma_eff(&self, f: usize, g: usize) -> f64 {
        self.sigma.value[[f, g]].f64().max(self.cfg.sigma_min)
    }

    /// Gaussian responses [filters, components, bands].
    fn responses(&self, positions: &[f64]) -> Array3<f64> {
        let (nf, ng) = (self.cfg.filters, self.cfg.components);
        Array3::from_shape_fn((nf, ng, positions.len()), |(f, g, b)| {
            let s = self.sigma_eff(f, g);
            let d = positions[b] - self.mu.value[[f, g]].f64();
            (-d * d / (2.0 * s * s)).exp()
        })
    }

    fn kernel_at(&self, positions: &[f64]) -> Array4<F> {
        let (nf, ng, k) = (self.cfg.filters, self.cfg.components, self.cfg.kernel);
        let w = self.responses(positions);
        let mut out = Array4::<F>::zeros((nf, positions.len(), k, k));
        for f in 0..nf {
            for b in 0..positions.len() {
                let mut plane = out.index_axis_mut(Axis(0), f);
                let mut plane = plane.index_axis_mut(Axis(0), b);
                for g in 0..ng {
                    let wg = F::lit(w[[f, g, b]]);
                    for i in 0..k {
                        for j in 0..k {
                            plane[[i, j]] += wg * self.taps.value[[f, g, i, j]];
                        }
                    }
                }
            }
        }
        out
    }

    /// Convolution kernel [filters, bands, k, k] for an arbitrary grid.
    pub fn weights_for(&self, wavelengths_nm: &[f64]) -> Result<Array4<F>> {
        Ok(self.kernel_at(&self.normalise(wavelengths_nm)?))
    }

    /// Kernel for the currently bound grid.
    pub fn kernel(&self) -> Result<Array4<F>> {
        if self.positions.is_empty() {
            return Err(NnError::State("wavelength conv has no grid bound".into()));
        }
        Ok(self.kernel_at(&self.positions))
    }
}

impl<F: Scalar> Layer<F> for WavelengthConv<F> {
    fn kind(&self) -> &'static str {
        "wavelength_conv"
    }

    fn forward(&mut self, x: ArrayD<F>, mode: Mode) -> Result<(ArrayD<F>, Cache)> {
        let kernel = self.kernel()?;
        let x5 = to5(x, 2)?;
        let b = self.positions.len();
        if x5.shape()[1] != b {
            return Err(NnError::Shape(format!("wavelength conv bound to {b} bands got {} channels", x5.shape()[1])));
        }
        let k = self.cfg.kernel;
        let w2 = kernel.view().into_shape_with_order((self.cfg.filters, b * k * k)).expect("contiguous");
        let bias = self.bias.as_ref().map(|p| p.value.view().into_dimensionality().expect("rank 1"));
        let y = conv_forward(x5.view(), w2, bias, &self.geom())?;
        let cache: Cache = if mode == Mode::Train { Box::new((x5, kernel)) } else { empty_cache() };
        Ok((from5(y, 2), cache))
    }

    fn backward(&mut self, cache: Cache, grad: ArrayD<F>) -> Result<ArrayD<F>> {
        let (x5, kernel): (Array5<F>, Array4<F>) = take_cache(cache, "wavelength_conv")?;
        let (nf, ng, k) = (self.cfg.filters, self.cfg.components, self.cfg.kernel);
        let b = self.positions.len();
        let w2 = kernel.view().into_shape_with_order((nf, b * k * k)).expect("contiguous");
        let g5 = to5(grad, 2)?;
        let gr = conv_backward(x5.view(), w2, g5.view(), &self.geom(), self.input_grad)?;
        let dk = gr.dw.into_shape_with_order((nf, b, k, k)).expect("kernel grad shape");

        let w = self.responses(&self.positions);
        let mut dtaps = Array4::<F>::zeros((nf, ng, k, k));
        let mut dmu = Array2::<F>::zeros((nf, ng));
        let mut dsigma = Array2::<F>::zeros((nf, ng));
        for f in 0..nf {
            for g in 0..ng {
                let s = self.sigma_eff(f, g);
                let mu = self.mu.value[[f, g]].f64();
                let clamped = self.sigma.value[[f, g]].f64() < self.cfg.sigma_min;
                let (mut acc_mu, mut acc_sigma) = (0.0, 0.0);
                for bi in 0..b {
                    let wb = w[[f, g, bi]];
                    let mut inner = 0.0;
                    for i in 0..k {
                        for j in 0..k {
                            let d = dk[[f, bi, i, j]].f64();
                            inner += self.taps.value[[f, g, i, j]].f64() * d;
                            dtaps[[f, g, i, j]] += F::lit(wb * d);
                        }
                    }
                    let delta = self.positions[bi] - mu;
                    acc_mu += inner * wb * delta / (s * s);
                    acc_sigma += inner * wb * delta * delta / (s * s * s);
                }
                dmu[[f, g]] = F::lit(acc_mu);
                dsigma[[f, g]] = if clamped { F::zero() } else { F::lit(acc_sigma) };
            }
        }
        self.taps.accumulate(dtaps.into_dyn().view());
        self.mu.accumulate(dmu.into_dyn().view());
        self.sigma.accumulate(dsigma.into_dyn().view());
        if let Some(bias) = &mut self.bias {
            bias.accumulate(gr.db.into_dyn().view());
        }
        Ok(match gr.dx {
            Some(dx) => from5(dx, 2),
            None => ArrayD::zeros(IxDyn(&[0])),
        })
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        per_sample_out(&self.geom(), 2, input.first().copied().unwrap_or(0), self.cfg.filters, input)
    }

    fn visit(&self, prefix: &str, f: &mut Visitor<'_, F>) {
        f(&join(prefix, "taps"), Tensor::Param(&self.taps));
        f(&join(prefix, "mu"), Tensor::Param(&self.mu));
        f(&join(prefix, "sigma"), Tensor::Param(&self.sigma));
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), Tensor::Param(b));
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, F>) {
        f(&join(prefix, "taps"), TensorMut::Param(&mut self.taps));
        f(&join(prefix, "mu"), TensorMut::Param(&mut self.mu));
        f(&join(prefix, "sigma"), TensorMut::Param(&mut self.sigma));
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), TensorMut::Param(b));
        }
    }
}
