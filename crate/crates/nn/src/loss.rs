use ndarray::{Array2, ArrayView2};

use crate::{NnError, Result, Scalar};

/// Softmax cross-entropy per sample. Returns the per-sample losses and the
/// gradient of their sum w.r.t. the logits.
pub fn softmax_cross_entropy<F: Scalar>(logits: ArrayView2<F>, labels: &[usize]) -> Result<(Vec<f64>, Array2<F>)> {
    let (n, k) = logits.dim();
    if labels.len() != n {
        return Err(NnError::Shape(format!("{} labels for {n} logit rows", labels.len())));
    }
    let mut losses = Vec::with_capacity(n);
    let mut grad = Array2::<F>::zeros((n, k));
    for (i, row) in logits.outer_iter().enumerate() {
        let y = labels[i];
        if y >= k {
            return Err(NnError::Invalid(format!("label {y} out of range for {k} classes")));
        }
        let m = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.f64() - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let loss = z.ln() + m - row[y].f64();
        if !loss.is_finite() {
            return Err(NnError::Numeric(format!("non-finite loss for sample {i}")));
        }
        losses.push(loss);
        for (j, e) in exps.iter().enumerate() {
            let p = e / z;
            grad[[i, j]] = F::lit(if j == y { p - 1.0 } else { p });
        }
    }
    Ok((losses, grad))
}

/// Index of the largest logit per row; the first index wins ties.
pub fn argmax_rows<F: Scalar>(logits: ArrayView2<F>) -> Vec<usize> {
    logits
        .outer_iter()
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
