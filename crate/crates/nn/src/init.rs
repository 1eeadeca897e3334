//! Fan-in scaled uniform initialisation.

use ndarray::{ArrayD, IxDyn};
use rand::distr::{Distribution, Uniform};
use rand::Rng;

use crate::Scalar;

pub fn uniform<F: Scalar, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> ArrayD<F> {
    if bound <= 0.0 {
        return ArrayD::zeros(IxDyn(shape));
    }
    let dist = Uniform::new(-bound, bound).expect("finite bound");
    let n: usize = shape.iter().product();
    let data: Vec<F> = (0..n).map(|_| F::lit(dist.sample(rng))).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches length")
}

/// Weights drawn from U(-b, b) with b = sqrt(6 / fan_in).
pub fn he_uniform<F: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> ArrayD<F> {
    uniform(shape, (6.0 / fan_in.max(1) as f64).sqrt(), rng)
}

/// Biases drawn from U(-b, b) with b = 1 / sqrt(fan_in).
pub fn bias_uniform<F: Scalar, R: Rng + ?Sized>(len: usize, fan_in: usize, rng: &mut R) -> ArrayD<F> {
    uniform(&[len], 1.0 / (fan_in.max(1) as f64).sqrt(), rng)
}
