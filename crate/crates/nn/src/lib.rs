//! Small CPU layer library with hand-written backward passes.
//!
//! Tensors are `ndarray` arrays with the batch on axis 0. Every layer returns an
//! opaque cache from `forward` that its `backward` consumes, so one layer instance
//! can serve several in-flight batches.

use std::any::Any;
use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{ArrayD, ArrayViewD};

pub mod conv;
pub mod gradcheck;
pub mod gru;
pub mod init;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod pool;
pub mod wavelength;

pub use conv::{Conv, ConvGeom};
pub use gru::Gru;
pub use layers::{BatchNorm, CenterPixel, Flatten, GlobalAvgPool, Linear, Relu, Reshape, Residual, Sequential, Tile};
pub use loss::softmax_cross_entropy;
pub use optim::{Adam, Sgd};
pub use pool::{Pool, PoolKind};
pub use wavelength::{WavelengthConv, WavelengthConvConfig};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("cache of unexpected type passed to {0} backward")]
    Cache(&'static str),
    #[error("state error: {0}")]
    State(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Floating point element type (f32 for training, f64 for gradient checks).
pub trait Scalar:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::iter::Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + 'static
{
    fn lit(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Scalar for f32 {
    fn lit(v: f64) -> Self {
        v as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn lit(v: f64) -> Self {
        v
    }
    fn f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running averages updated, cache kept for backward.
    Train,
    /// Running statistics, no state change.
    Eval,
}

/// Trainable tensor. `grad` stays `None` until some backward pass reaches it,
/// which lets the optimizer skip parameters a step never touched.
#[derive(Clone, Debug)]
pub struct Param<F> {
    pub value: ArrayD<F>,
    pub grad: Option<ArrayD<F>>,
}

impl<F: Scalar> Param<F> {
    pub fn new(value: ArrayD<F>) -> Self {
        Self { value, grad: None }
    }

    pub fn accumulate(&mut self, g: ArrayViewD<F>) {
        match &mut self.grad {
            Some(acc) => *acc += &g,
            None => self.grad = Some(g.to_owned()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn touched(&self) -> bool {
        self.grad.is_some()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

pub enum Tensor<'a, F> {
    Param(&'a Param<F>),
    Buffer(&'a ArrayD<F>),
}

pub enum TensorMut<'a, F> {
    Param(&'a mut Param<F>),
    Buffer(&'a mut ArrayD<F>),
}

pub type Cache = Box<dyn Any + Send>;

pub type Visitor<'v, F> = dyn FnMut(&str, Tensor<'_, F>) + 'v;
pub type VisitorMut<'v, F> = dyn FnMut(&str, TensorMut<'_, F>) + 'v;

pub trait Layer<F: Scalar>: Send + Sync {
    fn kind(&self) -> &'static str;

    fn forward(&mut self, x: ArrayD<F>, mode: Mode) -> Result<(ArrayD<F>, Cache)>;

    /// Accumulates parameter gradients and returns the gradient w.r.t. the input.
    fn backward(&mut self, cache: Cache, grad: ArrayD<F>) -> Result<ArrayD<F>>;

    /// Per-sample output shape for a per-sample input shape.
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>>;

    fn visit(&self, _prefix: &str, _f: &mut Visitor<'_, F>) {}

    fn visit_mut(&mut self, _prefix: &str, _f: &mut VisitorMut<'_, F>) {}
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn take_cache<T: 'static>(cache: Cache, who: &'static str) -> Result<T> {
    cache.downcast::<T>().map(|b| *b).map_err(|_| NnError::Cache(who))
}

pub(crate) fn empty_cache() -> Cache {
    Box::new(())
}

pub fn param_count<F: Scalar>(layer: &dyn Layer<F>) -> usize {
    let mut n = 0;
    layer.visit("", &mut |_, t| {
        if let Tensor::Param(p) = t {
            n += p.len();
        }
    });
    n
}

pub fn zero_grad<F: Scalar>(layer: &mut dyn Layer<F>) {
    layer.visit_mut("", &mut |_, t| {
        if let TensorMut::Param(p) = t {
            p.zero_grad();
        }
    });
}

/// Named copies of every parameter and buffer, in visiting order.
pub fn state_dict<F: Scalar>(layer: &dyn Layer<F>) -> Vec<(String, ArrayD<F>)> {
    let mut out = Vec::new();
    layer.visit("", &mut |name, t| {
        let v = match t {
            Tensor::Param(p) => p.value.clone(),
            Tensor::Buffer(b) => b.clone(),
        };
        out.push((name.to_string(), v));
    });
    out
}

/// Overwrites tensors by name. Every tensor of the layer must be present with
/// a matching shape.
pub fn load_state<F: Scalar>(layer: &mut dyn Layer<F>, state: &[(String, ArrayD<F>)]) -> Result<()> {
    let map: std::collections::HashMap<&str, &ArrayD<F>> = state.iter().map(|(k, v)| (k.as_str(), v)).collect();
    let mut err = None;
    layer.visit_mut("", &mut |name, t| {
        if err.is_some() {
            return;
        }
        let Some(src) = map.get(name) else {
            err = Some(NnError::State(format!("missing tensor {name}")));
            return;
        };
        let dst = match t {
            TensorMut::Param(p) => &mut p.value,
            TensorMut::Buffer(b) => b,
        };
        if dst.shape() != src.shape() {
            err = Some(NnError::State(format!("tensor {name}: shape {:?} vs stored {:?}", dst.shape(), src.shape())));
            return;
        }
        dst.assign(*src);
    });
    err.map_or(Ok(()), Err)
}

pub(crate) fn check_rank<F>(x: &ArrayD<F>, rank: usize, who: &str) -> Result<()> {
    if x.ndim() != rank {
        return Err(NnError::Shape(format!("{who} expects rank {rank} input, got shape {:?}", x.shape())));
    }
    Ok(())
}
