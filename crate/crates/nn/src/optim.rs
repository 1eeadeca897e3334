use std::collections::HashMap;

use ndarray::ArrayD;

use crate::{Layer, Scalar, TensorMut};

struct Moments<F> {
    m: ArrayD<F>,
    v: ArrayD<F>,
    t: i32,
}

/// Adam with bias correction. Parameters whose gradient is unset are left
/// alone and keep their own step counters.
pub struct Adam<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: HashMap<String, Moments<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, state: HashMap::new() }
    }

    /// Applies one update and returns the number of parameter tensors changed.
    pub fn step(&mut self, model: &mut dyn Layer<F>) -> usize {
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let state = &mut self.state;
        let mut updated = 0;
        model.visit_mut("", &mut |name, t| {
            let TensorMut::Param(p) = t else { return };
            let Some(g) = &p.grad else { return };
            let st = state.entry(name.to_string()).or_insert_with(|| Moments {
                m: ArrayD::zeros(p.value.raw_dim()),
                v: ArrayD::zeros(p.value.raw_dim()),
                t: 0,
            });
            st.t += 1;
            let c1 = 1.0 - b1.powi(st.t);
            let c2 = 1.0 - b2.powi(st.t);
            let (fb1, fb2) = (F::lit(b1), F::lit(b2));
            let (ob1, ob2) = (F::lit(1.0 - b1), F::lit(1.0 - b2));
            let step = F::lit(lr / c1);
            let c2s = F::lit(c2.sqrt());
            let fe = F::lit(eps);
            ndarray::Zip::from(&mut p.value).and(&mut st.m).and(&mut st.v).and(g).for_each(|w, m, v, &g| {
                *m = fb1 * *m + ob1 * g;
                *v = fb2 * *v + ob2 * g * g;
                *w -= step * *m / (v.sqrt() / c2s + fe);
            });
            updated += 1;
        });
        updated
    }

    /// Forgets the moments of every parameter whose name starts with `prefix`.
    pub fn reset_prefix(&mut self, prefix: &str) {
        self.state.retain(|k, _| !k.starts_with(prefix));
    }
}

/// Stochastic gradient descent with heavy-ball momentum: `v = mu * v + g; w -= lr * v`.
pub struct Sgd<F> {
    pub lr: f64,
    pub momentum: f64,
    velocity: HashMap<String, ArrayD<F>>,
}

impl<F: Scalar> Sgd<F> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self { lr, momentum, velocity: HashMap::new() }
    }

    pub fn step(&mut self, model: &mut dyn Layer<F>) -> usize {
        let (lr, mu) = (F::lit(self.lr), F::lit(self.momentum));
        let velocity = &mut self.velocity;
        let mut updated = 0;
        model.visit_mut("", &mut |name, t| {
            let TensorMut::Param(p) = t else { return };
            let Some(g) = &p.grad else { return };
            let v = velocity.entry(name.to_string()).or_insert_with(|| ArrayD::zeros(p.value.raw_dim()));
            ndarray::Zip::from(&mut p.value).and(v).and(g).for_each(|w, v, &g| {
                *v = mu * *v + g;
                *w -= lr * *v;
            });
            updated += 1;
        });
        updated
    }

    pub fn reset_prefix(&mut self, prefix: &str) {
        self.velocity.retain(|k, _| !k.starts_with(prefix));
    }
}
