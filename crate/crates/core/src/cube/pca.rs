use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Principal-component basis fitted on training pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// Per-band mean of the fitting pixels.
    pub mean: Array1<f64>,
    /// `bands x k`, columns are unit-norm components in descending variance order.
    pub basis: Array2<f64>,
    /// Variance captured by each component (sample covariance, `n - 1` denominator).
    pub explained_variance: Vec<f64>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
}

/// Fit `k` principal components on an `n x bands` pixel matrix.
pub fn fit_pca(pixels: ArrayView2<'_, f64>, k: usize) -> Result<PcaModel> {
    let (n, bands) = pixels.dim();
    if k == 0 {
        return Err(Error::Preprocess("PCA needs at least one component".into()));
    }
    if k > bands {
        return Err(Error::Preprocess(format!("{k} components requested from {bands} bands")));
    }
    if n < k || n < 2 {
        return Err(Error::InsufficientSamples { n, k });
    }
    let mean = pixels.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &pixels - &mean.view().insert_axis(Axis(0));
    let cov = centered.t().dot(&centered) / (n - 1) as f64;
    let total_variance = cov.diag().sum();

    let m = DMatrix::from_fn(bands, bands, |i, j| cov[[i, j]]);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..bands).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut basis = Array2::zeros((bands, k));
    let mut explained_variance = Vec::with_capacity(k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let col = eig.eigenvectors.column(idx);
        // Sign convention: the largest-magnitude loading is positive.
        let pivot = (0..bands).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a))).unwrap();
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for b in 0..bands {
            basis[[b, c]] = sign * col[b];
        }
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(PcaModel { mean, basis, explained_variance, total_variance })
}

impl PcaModel {
    pub fn components(&self) -> usize {
        self.basis.ncols()
    }

    pub fn bands(&self) -> usize {
        self.basis.nrows()
    }

    pub fn project(&self, pixel: ArrayView1<'_, f64>) -> Array1<f64> {
        (&pixel - &self.mean).dot(&self.basis)
    }

    pub fn reconstruct(&self, scores: ArrayView1<'_, f64>) -> Array1<f64> {
        self.basis.dot(&scores) + &self.mean
    }

    /// Fraction of total variance captured by each component.
    pub fn explained_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| if self.total_variance > 0.0 { v / self.total_variance } else { 0.0 })
            .collect()
    }
}
