//! Synthetic linear-Gaussian data for tests and calibration studies.
//!
//! Rows are generated as `x = W z + noise ⊙ ε` with `z ~ N(0, I_k)` and a
//! seeded random loading matrix, then standardized. Because the generative
//! model is exactly the family the β-VAE fits, these fixtures isolate the
//! behavior of trainers and samplers from model misspecification.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data_io::DataMatrix;
use crate::error::{Error, Result};
use crate::nn::sigmoid;

/// Generate a fully observed standardized matrix with `latent_dim` underlying
/// factors and independent Gaussian noise of scale `noise` per column.
pub fn synthetic_dataset(
    n_rows: usize,
    n_cols: usize,
    latent_dim: usize,
    noise: f64,
    seed: u64,
) -> Result<DataMatrix> {
    if n_rows == 0 || n_cols == 0 || latent_dim == 0 {
        return Err(Error::InvalidConfig(
            "synthetic data needs positive row, column, and latent counts".into(),
        ));
    }
    if !noise.is_finite() || noise <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "noise scale must be positive and finite, got {noise}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut loading = Array2::zeros((n_cols, latent_dim));
    for w in loading.iter_mut() {
        *w = rng.sample::<f64, _>(StandardNormal);
    }
    let mut raw = Array2::zeros((n_rows, n_cols));
    let mut z = Array1::zeros(latent_dim);
    for i in 0..n_rows {
        for zk in z.iter_mut() {
            *zk = rng.sample::<f64, _>(StandardNormal);
        }
        for j in 0..n_cols {
            let eps: f64 = rng.sample(StandardNormal);
            raw[(i, j)] = loading.row(j).dot(&z) + noise * eps;
        }
    }
    let mask = Array2::from_elem((n_rows, n_cols), false);
    let column_names = (0..n_cols).map(|j| format!("g{j}")).collect();
    let row_ids = (0..n_rows).map(|i| format!("row_{i}")).collect();
    DataMatrix::from_raw(&raw, &mask, column_names, row_ids)
}

/// Generate binary labels from a sparse logistic model over `data`'s
/// standardized values. Every `stride`-th column (starting at 0) is causal
/// with coefficients alternating ±2. Returns the labels and the causal
/// column names — the ground-truth set for false-discovery evaluation.
pub fn synthetic_labels(
    data: &DataMatrix,
    n_causal: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<String>)> {
    if n_causal == 0 || n_causal > data.n_cols() {
        return Err(Error::InvalidConfig(format!(
            "n_causal must be in 1..={}, got {n_causal}",
            data.n_cols()
        )));
    }
    let stride = data.n_cols() / n_causal;
    let causal: Vec<usize> = (0..n_causal).map(|c| c * stride).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = Vec::with_capacity(data.n_rows());
    for i in 0..data.n_rows() {
        let mut logit = 0.0;
        for (rank, &j) in causal.iter().enumerate() {
            let coef = if rank % 2 == 0 { 2.0 } else { -2.0 };
            logit += coef * data.values[(i, j)];
        }
        let p = sigmoid(logit);
        labels.push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
    }
    let names = causal
        .iter()
        .map(|&j| data.column_names[j].clone())
        .collect();
    Ok((labels, names))
}
