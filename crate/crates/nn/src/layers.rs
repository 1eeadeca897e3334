use ndarray::{Array1, Array2, Array3, ArrayD, Axis, Ix2, IxDyn};
use rand::Rng;

use crate::{
    check_rank, empty_cache, init, join, take_cache, Cache, Layer, Mode, NnError, Param, Result, Scalar, Tensor,
    TensorMut, Visitor, VisitorMut,
};

fn to2<F: Scalar>(x: ArrayD<F>, who: &str) -> Result<Array2<F>> {
    check_rank(&x, 2, who)?;
    Ok(x.into_dimensionality::<Ix2>().expect("rank checked"))
}

/// Fully connected layer, weight stored as [out, in].
pub struct Linear<F> {
    pub weight: Param<F>,
    pub bias: Param<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::new(init::he_uniform(&[output, input], input, rng)),
            bias: Param::new(init::bias_uniform(output, input, rng)),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.weight.value.shape()[1], self.weight.value.shape()[0])
    }

    fn w(&self) -> ndarray::ArrayView2<'_, F> {
        self.weight.value.view().into_dimensionality().expect("rank 2 weight")
    }
}

impl<F: Scalar> Layer<F> for Linear<F> {
    fn kind(&self) -> &'static str {
        "linear"
    }

    fn forward(&mut self, x: ArrayD<F>, mode: Mode) -> Result<(ArrayD<F>, Cache)> {
        let x = to2(x, "linear")?;
        let (input, _) = self.dims();
        if x.ncols() != input {
            return Err(NnError::Shape(format!("linear expects {input} features, got {}", x.ncols())));
        }
        let b = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().expect("rank 1");
        let y = x.dot(&self.w().t()) + b.insert_axis(Axis(0));
        let cache: Cache = if mode == Mode::Train { Box::new(x) } else { empty_cache() };
        Ok((y.into_dyn(), cache))
    }

    fn backward(&mut self, cache: Cache, grad: ArrayD<F>) -> Result<ArrayD<F>> {
        let x: Array2<F> = take_cache(cache, "linear")?;
        let g = to2(grad, "linear grad")?;
        let dw = g.t().dot(&x);
        self.weight.accumulate(dw.into_dyn().view());
        self.bias.accumulate(g.sum_axis(Axis(0)).into_dyn().view());
        Ok(g.dot(&self.w()).into_dyn())
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (i, o) = self.dims();
        if input != [i] {
            return Err(NnError::Shape(format!("linear({i}) cannot take per-sample shape {input:?}")));
        }
        Ok(vec![o])
    }

    fn visit(&self, prefix: &str, f: &mut Visitor<'_, F>) {
        f(&join(prefix, "weight"), Tensor::Param(&self.weight));
        f(&join(prefix, "bias"), Tensor::Param(&self.bias));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, F>) {
        f(&join(prefix, "weight"), TensorMut::Param(&mut self.weight));
        f(&join(prefix, "bias"), TensorMut::Param(&mut self.bias));
    }
}

/// Batch normalisation over axis 1 for inputs of any rank >= 2.
pub struct BatchNorm<F> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: ArrayD<F>,
    pub running_var: ArrayD<F>,
    pub eps: f64,
    pub momentum: f64,
}

struct BnCache<F> {
    shape: Vec<usize>,
    xhat: Array3<F>,
    inv_std: Array1<F>,
}

impl<F: Scalar> BatchNorm<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(ArrayD::ones(IxDyn(&[channels]))),
            beta: Param::new(ArrayD::zeros(IxDyn(&[channels]))),
            running_mean: ArrayD::zeros(IxDyn(&[channels])),
            running_var: ArrayD::ones(IxDyn(&[channels])),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }
}

fn as_ncs<F: Scalar>(x: ArrayD<F>) -> Result<(Vec<usize>, Array3<F>)> {
    if x.ndim() < 2 {
        return Err(NnError::Shape(format!("batch norm needs rank >= 2, got {:?}", x.shape())));
    }
    let shape = x.shape().to_vec();
    let s: usize = shape[2..].iter().product();
    let x = if x.is_standard_layout() { x } else { x.as_standard_layout().into_owned() };
    let x3 = x.into_shape_with_order((shape[0], shape[1], s)).expect("standard layout");
    Ok((shape, x3))
}

impl<F: Scalar> Layer<F> for BatchNorm<F> {
    fn kind(&self) -> &'static str {
        "batch_norm"
    }

    fn forward(&mut self, x: ArrayD<F>, mode: Mode) -> Result<(ArrayD<F>, Cache)> {
        let (shape, x3) = as_ncs(x)?;
        let c = shape[1];
        if c != self.channels() {
            return Err(NnError::Shape(format!("batch norm over {} channels got {c}", self.channels())));
        }
        let m = shape[0] * x3.shape()[2];
        let (mean, var) = if mode == Mode::Train {
            if m < 2 {
                return Err(NnError::Shape("batch norm in training needs more than one value per channel".into()));
            }
            let mut mean = Array1::<F>::zeros(c);
            let mut var = Array1::<F>::zeros(c);
            for ch in 0..c {
                let v = x3.index_axis(Axis(1), ch);
                let mu = v.iter().map(|a| a.f64()).sum::<f64>() / m as f64;
                let s2 = v.iter().map(|a| (a.f64() - mu).powi(2)).sum::<f64>() / m as f64;
                mean[ch] = F::lit(mu);
                var[ch] = F::lit(s2);
                let mo = self.momentum;
                self.running_mean[ch] = F::lit((1.0 - mo) * self.running_mean[ch].f64() + mo * mu);
                let unbiased = s2 * m as f64 / (m - 1) as f64;
                self.running_var[ch] = F::lit((1.0 - mo) * self.running_var[ch].f64() + mo * unbiased);
            }
            (mean, var)
        } else {
            (
                self.running_mean.clone().into_dimensionality().expect("rank 1"),
                self.running_var.clone().into_dimensionality().expect("rank 1"),
            )
        };
        let inv_std = var.mapv(|v| F::one() / (v + F::lit(self.eps)).sqrt());
        let mut xhat = x3;
        for ch in 0..c {
            let (mu, is) = (mean[ch], inv_std[ch]);
            xhat.index_axis_mut(Axis(1), ch).mapv_inplace(|a| (a - mu) * is);
        }
        let affine = |y: &mut Array3<F>| {
            for ch in 0..c {
                let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
                y.index_axis_mut(Axis(1), ch).mapv_inplace(|a| a * g + b);
            }
        };
        let (y, cache): (Array3<F>, Cache) = if mode == Mode::Train {
            let mut y = xhat.clone();
            affine(&mut y);
            (y, Box::new(BnCache { shape: shape.clone(), xhat, inv_std }))
        } else {
            let mut y = xhat;
            affine(&mut y);
            (y, empty_cache())
        };
        let y = y.into_shape_with_order(IxDyn(&shape)).expect("standard layout");
        Ok((y, cache))
    }

    fn backward(&mut self, cache: Cache, grad: ArrayD<F>) -> Result<ArrayD<F>> {
        let BnCache { shape, xhat, inv_std } = take_cache::<BnCache<F>>(cache, "batch_norm")?;
        let (_, g3) = as_ncs(grad)?;
        let c = shape[1];
        let m = (shape[0] * xhat.shape()[2]) as f64;
        let mut dgamma = Array1::<F>::zeros(c);
        let mut dbeta = Array1::<F>::zeros(c);
        let mut dx = Array3::<F>::zeros(g3.raw_dim());
        for ch in 0..c {
            let gv = g3.index_axis(Axis(1), ch);
            let xv = xhat.index_axis(Axis(1), ch);
            let sum_g: f64 = gv.iter().map(|a| a.f64()).sum();
            let sum_gx: f64 = gv.iter().zip(xv.iter()).map(|(a, b)| a.f64() * b.f64()).sum();
            dgamma[ch] = F::lit(sum_gx);
            dbeta[ch] = F::lit(sum_g);
            let scale = self.gamma.value[ch] * inv_std[ch];
            let mut d = dx.index_axis_mut(Axis(1), ch);
            let (mg, mgx) = (F::lit(sum_g / m), F::lit(sum_gx / m));
            ndarray::Zip::from(&mut d).and(&gv).and(&xv).for_each(|d, &g, &xh| {
                *d = scale * (g - mg - xh * mgx);
            });
        }
        self.gamma.accumulate(dgamma.into_dyn().view());
        self.beta.accumulate(dbeta.into_dyn().view());
        Ok(dx.into_shape_with_order(IxDyn(&shape)).expect("standard layout"))
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.first() != Some(&self.channels()) {
            return Err(NnError::Shape(format!(
                "batch norm over {} channels cannot take per-sample shape {input:?}",
                self.channels()
            )));
        }
        Ok(input.to_vec())
    }

    fn visit(&self, prefix: &str, f: &mut Visitor<'_, F>) {
        f(&join(prefix, "gamma"), Tensor::Param(&self.gamma));
        f(&join(prefix, "beta"), Tensor::Param(&self.beta));
        f(&join(prefix, "running_mean"), Tensor::Buffer(&self.running_mean));
        f(&join(prefix, "running_var"), Tensor::Buffer(&self.running_var));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, F>) {
        f(&join(prefix, "gamma"), TensorMut::Param(&mut self.gamma));
        f(&join(prefix, "beta"), TensorMut::Param(&mut self.beta));
        f(&join(prefix, "running_mean"), TensorMut::Buffer(&mut self.running_mean));
        f(&join(prefix, "running_var"), TensorMut::Buffer(&mut self.running_var));
    }
}

pub struct Relu;

impl<F: Scalar> Layer<F> for Relu {
    fn kind(&self) -> &'static str {
        "relu"
    }

    fn forward(&mut self, x: ArrayD<F>, mode: Mode) -> Result<(ArrayD<F>, Cache)> {
        let y = x.mapv_into(|a| if a > F::zero() { a } else { F::zero() });
        let cache: Cache = if mode == Mode::Train { Box::new(y.mapv(|a| a > F::zero())) } else { empty_cache() };
        Ok((y, cache))
    }

    fn backward(&mut self, cache: Cache, mut grad: ArrayD<F>) -> Result<ArrayD<F>> {
        let mask: ArrayD<bool> = take_cache(cache, "relu")?;
        if mask.shape() != grad.shape() {
            return Err(NnError::Shape("relu grad shape".into()));
        }
        ndarray::Zip::from(&mut grad).and(&mask).for_each(|g, &m| {
            if !m {
                *g = F::zero();
            }
        });
        Ok(grad)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }
}

/// Reshapes each sample to a fixed shape.
pub struct Reshape {
    pub shape: Vec<usize>,
}

impl<F: Scalar> Layer<F> for Reshape {
    fn kind(&self) -> &'static str {
        "reshape"
    }

    fn forward(&mut self, x: ArrayD<F>, _mode: Mode) -> Result<(ArrayD<F>, Cache)> {
        let orig = x.shape().to_vec();
        let mut shape = vec![orig[0]];
        shape.extend_from_slice(&self.shape);
        let x = if x.is_standard_layout() { x } else { x.as_standard_layout().into_owned() };
        let y = x
            .into_shape_with_order(IxDyn(&shape))
            .map_err(|e| NnError::Shape(format!("reshape {orig:?} -> {shape:?}: {e}")))?;
        Ok((y, Box::new(orig)))
    }

    fn backward(&mut self, cache: Cache, grad: ArrayD<F>) -> Result<ArrayD<F>> {
        let orig: Vec<usize> = take_cache(cache, "reshape")?;
        let g = if grad.is_standard_layout() { grad } else { grad.as_standard_layout().into_owned() };
        g.into_shape_with_order(IxDyn(&orig)).map_err(|e| NnError::Shape(e.to_string()))
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.iter().product::<usize>() != self.shape.iter().product::<usize>() {
            return Err(NnError::Shape(format!("cannot reshape {input:?} to {:?}", self.shape)));
        }
        Ok(self.shape.clone())
    }
}

pub struct Flatten;

impl<F: Scalar> Layer<F> for Flatten {
    fn kind(&self) -> &'static str {
        "flatten"
    }

    fn forward(&mut self, x: ArrayD<F>, mode: Mode) -> Result<(ArrayD<F>, Cache)> {
        let n: usize = x.shape()[1..].iter().product();
        Reshape { shape: vec![n] }.forward(x, mode)
    }

    fn backward(&mut self, cache: Cache, grad: ArrayD<F>) -> Result<ArrayD<F>> {
        Layer::<F>::backward(&mut Reshape { shape: vec![] }, cache, grad)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(vec![input.iter().product()])
    }
}

/// [N, C, ...spatial] -> [N, C] by averaging the spatial axes.
pub struct GlobalAvgPool;

impl<F: Scalar> Layer<F> for GlobalAvgPool {
    fn kind(&self) -> &'static str {
        "global_avg_pool"
    }

    fn forward(&mut self, x: ArrayD<F>, _mode: Mode) -> Result<(ArrayD<F>, Cache)> {
        let (shape, x3) = as_ncs(x)?;
        let scale = F::lit(1.0 / x3.shape()[2] as f64);
        let y = x3.sum_axis(Axis(2)).mapv(|v| v * scale);
        Ok((y.into_dyn(), Box::new(shape)))
    }

    fn backward(&mut self, cache: Cache, grad: ArrayD<F>) -> Result<ArrayD<F>> {
        let shape: Vec<usize> = take_cache(cache, "global_avg_pool")?;
        let g = to2(grad, "global_avg_pool grad")?;
        let s: usize = shape[2..].iter().product();
        let scale = F::lit(1.0 / s as f64);
        let g3 = g.mapv(|a| a * scale).insert_axis(Axis(2));
        let dx = g3.broadcast((shape[0], shape[1], s)).expect("broadcast").to_owned();
        Ok(dx.into_shape_with_order(IxDyn(&shape)).expect("standard layout"))
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() < 2 {
            return Err(NnError::Shape(format!("global pooling needs spatial axes, got {input:?}")));
        }
        Ok(vec![input[0]])
    }
}

/// [N, C, H, W] -> [N, C]: the spectrum at (H/2, W/2).
pub struct CenterPixel;

impl<F: Scalar> Layer<F> for CenterPixel {
    fn kind(&self) -> &'static str {
        "center_pixel"
    }

    fn forward(&mut self, x: ArrayD<F>, _mode: Mode) -> Result<(ArrayD<F>, Cache)> {
        check_rank(&x, 4, "center_pixel")?;
        let s = x.shape().to_vec();
        let y = x.index_axis(Axis(3), s[3] / 2).index_axis(Axis(2), s[2] / 2).to_owned();
        Ok((y, Box::new(s)))
    }

    fn backward(&mut self, cache: Cache, grad: ArrayD<F>) -> Result<ArrayD<F>> {
        let s: Vec<usize> = take_cache(cache, "center_pixel")?;
        let g = to2(grad, "center_pixel grad")?;
        let mut dx = ArrayD::<F>::zeros(IxDyn(&s));
        dx.index_axis_mut(Axis(3), s[3] / 2).index_axis_mut(Axis(2), s[2] / 2).assign(&g);
        Ok(dx)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 3 {
            return Err(NnError::Shape(format!("center pixel needs [C, H, W], got {input:?}")));
        }
        Ok(vec![input[0]])
    }
}

/// [N, C] -> [N, C, H, W] by repeating each vector over the plane.
pub struct Tile {
    pub height: usize,
    pub width: usize,
}

impl<F: Scalar> Layer<F> for Tile {
    fn kind(&self) -> &'static str {
        "tile"
    }

    fn forward(&mut self, x: ArrayD<F>, _mode: Mode) -> Result<(ArrayD<F>, Cache)> {
        let x = to2(x, "tile")?;
        let (n, c) = x.dim();
        let y = x
            .insert_axis(Axis(2))
            .insert_axis(Axis(3))
            .broadcast((n, c, self.height, self.width))
            .expect("broadcast")
            .to_owned();
        Ok((y.into_dyn(), empty_cache()))
    }

    fn backward(&mut self, _cache: Cache, grad: ArrayD<F>) -> Result<ArrayD<F>> {
        check_rank(&grad, 4, "tile grad")?;
        Ok(grad.sum_axis(Axis(3)).sum_axis(Axis(2)))
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 1 {
            return Err(NnError::Shape(format!("tile needs a vector, got {input:?}")));
        }
        Ok(vec![input[0], self.height, self.width])
    }
}

/// Ordered chain of named layers.
#[derive(Default)]
pub struct Sequential<F> {
    layers: Vec<(String, Box<dyn Layer<F>>)>,
}

impl<F: Scalar> Sequential<F> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, layer: impl Layer<F> + 'static) -> &mut Self {
        let name = self.layers.len().to_string();
        self.layers.push((name, Box::new(layer)));
        self
    }

    pub fn push_named(&mut self, name: impl Into<String>, layer: Box<dyn Layer<F>>) -> &mut Self {
        self.layers.push((name.into(), layer));
        self
    }

    pub fn with(mut self, layer: impl Layer<F> + 'static) -> Self {
        self.push(layer);
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &dyn Layer<F>)> {
        self.layers.iter().map(|(n, l)| (n.as_str(), l.as_ref()))
    }

    pub fn layer_mut(&mut self, index: usize) -> Option<&mut Box<dyn Layer<F>>> {
        self.layers.get_mut(index).map(|(_, l)| l)
    }
}

impl<F: Scalar> Layer<F> for Sequential<F> {
    fn kind(&self) -> &'static str {
        "sequential"
    }

    fn forward(&mut self, mut x: ArrayD<F>, mode: Mode) -> Result<(ArrayD<F>, Cache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        for (_, l) in &mut self.layers {
            let (y, c) = l.forward(x, mode)?;
            caches.push(c);
            x = y;
        }
        Ok((x, Box::new(caches)))
    }

    fn backward(&mut self, cache: Cache, mut grad: ArrayD<F>) -> Result<ArrayD<F>> {
        let caches: Vec<Cache> = take_cache(cache, "sequential")?;
        if caches.len() != self.layers.len() {
            return Err(NnError::Cache("sequential"));
        }
        for ((_, l), c) in self.layers.iter_mut().zip(caches).rev() {
            // A layer that skips its input gradient ends the chain; anything
            // before it is parameter-free preprocessing.
            if grad.ndim() == 1 && grad.is_empty() {
                break;
            }
            grad = l.backward(c, grad)?;
        }
        Ok(grad)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut s = input.to_vec();
        for (_, l) in &self.layers {
            s = l.output_shape(&s)?;
        }
        Ok(s)
    }

    fn visit(&self, prefix: &str, f: &mut Visitor<'_, F>) {
        for (n, l) in &self.layers {
            l.visit(&join(prefix, n), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, F>) {
        for (n, l) in &mut self.layers {
            l.visit_mut(&join(prefix, n), f);
        }
    }
}

/// `main(x) + shortcut(x)`, identity shortcut when none is given.
pub struct Residual<F> {
    pub main: Sequential<F>,
    pub shortcut: Option<Sequential<F>>,
}

impl<F: Scalar> Layer<F> for Residual<F> {
    fn kind(&self) -> &'static str {
        "residual"
    }

    fn forward(&mut self, x: ArrayD<F>, mode: Mode) -> Result<(ArrayD<F>, Cache)> {
        let (short, sc) = match &mut self.shortcut {
            Some(s) => {
                let (y, c) = s.forward(x.clone(), mode)?;
                (y, Some(c))
            }
            None => (x.clone(), None),
        };
        let (mut y, mc) = self.main.forward(x, mode)?;
        if y.shape() != short.shape() {
            return Err(NnError::Shape(format!("residual branches disagree: {:?} vs {:?}", y.shape(), short.shape())));
        }
        y += &short;
        Ok((y, Box::new((mc, sc))))
    }

    fn backward(&mut self, cache: Cache, grad: ArrayD<F>) -> Result<ArrayD<F>> {
        let (mc, sc): (Cache, Option<Cache>) = take_cache(cache, "residual")?;
        let mut dx = self.main.backward(mc, grad.clone())?;
        match (&mut self.shortcut, sc) {
            (Some(s), Some(c)) => dx += &s.backward(c, grad)?,
            (None, None) => dx += &grad,
            _ => return Err(NnError::Cache("residual")),
        }
        Ok(dx)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let m = self.main.output_shape(input)?;
        let s = match &self.shortcut {
            Some(s) => s.output_shape(input)?,
            None => input.to_vec(),
        };
        if m != s {
            return Err(NnError::Shape(format!("residual branches disagree: {m:?} vs {s:?}")));
        }
        Ok(m)
    }

    fn visit(&self, prefix: &str, f: &mut Visitor<'_, F>) {
        self.main.visit(&join(prefix, "main"), f);
        if let Some(s) = &self.shortcut {
            s.visit(&join(prefix, "shortcut"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, F>) {
        self.main.visit_mut(&join(prefix, "main"), f);
        if let Some(s) = &mut self.shortcut {
            s.visit_mut(&join(prefix, "shortcut"), f);
        }
    }
}
