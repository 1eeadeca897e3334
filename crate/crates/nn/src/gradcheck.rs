//! Central finite-difference checks for layers in f64.
//!
//! The probe loss is `sum(forward(x) * r)` for a fixed random `r`, so the
//! analytic side is a single backward pass seeded with `r`.

use ndarray::ArrayD;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{init, zero_grad, Layer, Mode, Result, Tensor, TensorMut};

#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub eps: f64,
    /// Denominator floor, scaled by `1 + |probe loss|` because the cancellation
    /// error of the central difference grows with the loss magnitude.
    pub floor: f64,
    /// Entries sampled per tensor (all entries when the tensor is smaller).
    pub per_tensor: usize,
    pub seed: u64,
    pub check_input: bool,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { eps: 1e-5, floor: 1e-6, per_tensor: 24, seed: 0, check_input: true }
    }
}

pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn probe(layer: &mut dyn Layer<f64>, x: &ArrayD<f64>, r: &ArrayD<f64>) -> Result<f64> {
    let (y, _) = layer.forward(x.clone(), Mode::Train)?;
    Ok((&y * r).sum())
}

fn with_param<T>(layer: &mut dyn Layer<f64>, name: &str, f: impl FnOnce(&mut ArrayD<f64>) -> T) -> Option<T> {
    let mut f = Some(f);
    let mut out = None;
    layer.visit_mut("", &mut |n, t| {
        if n == name {
            if let (TensorMut::Param(p), Some(f)) = (t, f.take()) {
                out = Some(f(&mut p.value));
            }
        }
    });
    out
}

fn pick<R: Rng>(len: usize, k: usize, rng: &mut R) -> Vec<usize> {
    if len <= k {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, k).into_vec();
        v.sort_unstable();
        v
    }
}

impl GradCheck {
    pub fn run(&self, layer: &mut dyn Layer<f64>, x: &ArrayD<f64>) -> Result<GradReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (y, cache) = layer.forward(x.clone(), Mode::Train)?;
        let r: ArrayD<f64> = init::uniform(y.shape(), 1.0, &mut rng);
        zero_grad(layer);
        let dx = layer.backward(cache, r.clone())?;
        let floor = self.floor * (1.0 + (&y * &r).sum().abs());

        let mut analytic: Vec<(String, ArrayD<f64>)> = Vec::new();
        layer.visit("", &mut |n, t| {
            if let Tensor::Param(p) = t {
                let g = p.grad.clone().unwrap_or_else(|| ArrayD::zeros(p.value.raw_dim()));
                analytic.push((n.to_string(), g));
            }
        });

        let mut report = GradReport { max_rel_error: 0.0, worst: String::new(), checked: 0 };
        let note = |name: String, a: f64, n: f64, report: &mut GradReport| {
            let e = rel_error(a, n, floor);
            report.checked += 1;
            if report.checked == 1 || e > report.max_rel_error {
                report.max_rel_error = e;
                report.worst = format!("{name}: analytic {a:e} numeric {n:e}");
            }
        };

        for (name, grad) in &analytic {
            let flat: Vec<f64> = grad.iter().copied().collect();
            for idx in pick(flat.len(), self.per_tensor, &mut rng) {
                let orig = with_param(layer, name, |v| {
                    let s = v.as_slice_memory_order_mut().expect("contiguous");
                    let o = s[idx];
                    s[idx] = o + self.eps;
                    o
                })
                .expect("parameter present");
                let plus = probe(layer, x, &r)?;
                with_param(layer, name, |v| v.as_slice_memory_order_mut().expect("contiguous")[idx] = orig - self.eps);
                let minus = probe(layer, x, &r)?;
                with_param(layer, name, |v| v.as_slice_memory_order_mut().expect("contiguous")[idx] = orig);
                let numeric = (plus - minus) / (2.0 * self.eps);
                note(format!("{name}[{idx}]"), flat[idx], numeric, &mut report);
            }
        }

        if self.check_input {
            let dflat: Vec<f64> = dx.iter().copied().collect();
            for idx in pick(x.len(), self.per_tensor, &mut rng) {
                let mut xp = x.clone();
                xp.as_slice_memory_order_mut().expect("contiguous")[idx] += self.eps;
                let plus = probe(layer, &xp, &r)?;
                let mut xm = x.clone();
                xm.as_slice_memory_order_mut().expect("contiguous")[idx] -= self.eps;
                let minus = probe(layer, &xm, &r)?;
                note(format!("input[{idx}]"), dflat[idx], (plus - minus) / (2.0 * self.eps), &mut report);
            }
        }
        Ok(report)
    }
}
