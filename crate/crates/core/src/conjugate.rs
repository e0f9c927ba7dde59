//! A single-latent linear-Gaussian reference model with closed-form answers.
//!
//! With one latent factor, loadings `a`, constant decoder variances `v`, and
//! the likelihood raised to the power 1/β, everything is Gaussian and exact:
//! the tempered posterior over `z` given any subset of coordinates, and the
//! predictive distribution of an unseen coordinate. The module also builds
//! real [`BetaVae`] instances whose linear heads realize this model exactly,
//! which is how the samplers are tested against analytic truth instead of
//! against themselves.

use ndarray::{Array1, Array2};

use crate::betavae::BetaVae;
use crate::error::{Error, Result};
use crate::nn::{inverse_softplus_floor, Activation, DenseNet, Layer};

/// Linear-Gaussian generative model `x_d = a_d z + N(0, v_d)`, `z ~ N(0,1)`,
/// with likelihood power 1/β.
#[derive(Debug, Clone)]
pub struct ConjugateModel {
    /// Per-coordinate loading a_d.
    pub loadings: Vec<f64>,
    /// Per-coordinate decoder variance v_d (must exceed the variance floor).
    pub noise_vars: Vec<f64>,
    /// Likelihood power 1/β.
    pub beta: f64,
}

impl ConjugateModel {
    pub fn new(loadings: Vec<f64>, noise_vars: Vec<f64>, beta: f64) -> Result<Self> {
        if loadings.is_empty() || loadings.len() != noise_vars.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} loadings vs {} noise variances",
                loadings.len(),
                noise_vars.len()
            )));
        }
        if !beta.is_finite() || beta <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "beta must be positive, got {beta}"
            )));
        }
        Ok(ConjugateModel {
            loadings,
            noise_vars,
            beta,
        })
    }

    /// Number of data coordinates.
    pub fn dim(&self) -> usize {
        self.loadings.len()
    }

    /// Mean and variance of the tempered posterior over `z` given the values
    /// of `x` at `coords`:
    ///
    /// ```text
    /// π(z | x_C) ∝ Π_{d∈C} N(x_d; a_d z, v_d)^{1/β} · N(z; 0, 1)
    ///            = N(z; m, 1/τ),   τ = 1 + Σ a_d²/(β v_d),
    ///                              m = (Σ a_d x_d/(β v_d)) / τ
    /// ```
    pub fn posterior_given(&self, x: &[f64], coords: &[usize]) -> (f64, f64) {
        let mut precision = 1.0;
        let mut weighted = 0.0;
        for &d in coords {
            let scale = self.beta * self.noise_vars[d];
            precision += self.loadings[d] * self.loadings[d] / scale;
            weighted += self.loadings[d] * x[d] / scale;
        }
        (weighted / precision, 1.0 / precision)
    }

    /// Mean and variance of the tempered predictive for coordinate `target`
    /// given the values of `x` at `observed`:
    /// `x_t | x_O ~ N(a_t m, a_t²/τ + β v_t)`.
    pub fn predictive(&self, x: &[f64], observed: &[usize], target: usize) -> (f64, f64) {
        let (m, var) = self.posterior_given(x, observed);
        let a = self.loadings[target];
        (a * m, a * a * var + self.beta * self.noise_vars[target])
    }

    /// Unnormalized log density of the tempered posterior at `z` given the
    /// values of `x` at `coords` (prior included).
    pub fn log_posterior_unnorm(&self, z: f64, x: &[f64], coords: &[usize]) -> f64 {
        let mut total = -0.5 * z * z; // prior, constants dropped
        for &d in coords {
            let dev = x[d] - self.loadings[d] * z;
            total -= dev * dev / (2.0 * self.beta * self.noise_vars[d]);
            total -= 0.5 * (self.noise_vars[d].ln()) / self.beta;
        }
        total
    }

    /// Normalized probability masses of the tempered posterior on an evenly
    /// spaced grid — the brute-force oracle the SIR sampler is compared to.
    pub fn grid_posterior(
        &self,
        x: &[f64],
        coords: &[usize],
        lo: f64,
        hi: f64,
        n_points: usize,
    ) -> Vec<f64> {
        let step = (hi - lo) / (n_points - 1) as f64;
        let logs: Vec<f64> = (0..n_points)
            .map(|i| self.log_posterior_unnorm(lo + step * i as f64, x, coords))
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = unnorm.iter().sum();
        unnorm.into_iter().map(|u| u / total).collect()
    }

    /// Exact linear decoder: `μ_d(z) = a_d z`, variance head pinned at `v_d`.
    pub fn decoder_net(&self) -> Result<DenseNet> {
        let d = self.dim();
        let mut weights = Array2::zeros((2 * d, 1));
        let mut bias = Array1::zeros(2 * d);
        for j in 0..d {
            weights[(j, 0)] = self.loadings[j];
            bias[d + j] = inverse_softplus_floor(self.noise_vars[j])?;
        }
        DenseNet::from_layers(vec![Layer {
            weights,
            bias,
            activation: Activation::Identity,
        }])
    }

    /// Linear encoder with explicit proposal: `q(z|x) = N(Σ w_d x_d + b, var)`.
    pub fn encoder_net(&self, mean_weights: &[f64], mean_bias: f64, var: f64) -> Result<DenseNet> {
        if mean_weights.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "{} mean weights for a {}-dim model",
                mean_weights.len(),
                self.dim()
            )));
        }
        let d = self.dim();
        let mut weights = Array2::zeros((2, d));
        for (j, &w) in mean_weights.iter().enumerate() {
            weights[(0, j)] = w;
        }
        let mut bias = Array1::zeros(2);
        bias[0] = mean_bias;
        bias[1] = inverse_softplus_floor(var)?;
        DenseNet::from_layers(vec![Layer {
            weights,
            bias,
            activation: Activation::Identity,
        }])
    }

    /// The encoder that equals the tempered posterior given a *full*
    /// completion — the "perfect proposal" under which Metropolis corrections
    /// always accept.
    pub fn perfect_encoder(&self) -> Result<DenseNet> {
        let all: Vec<usize> = (0..self.dim()).collect();
        let (_, var) = self.posterior_given(&vec![0.0; self.dim()], &all);
        let tau = 1.0 / var;
        let weights: Vec<f64> = (0..self.dim())
            .map(|d| self.loadings[d] / (self.beta * self.noise_vars[d]) / tau)
            .collect();
        self.encoder_net(&weights, 0.0, var)
    }

    /// Assemble a [`BetaVae`] with the exact decoder and a given encoder.
    pub fn vae_with_encoder(&self, encoder: DenseNet) -> Result<BetaVae> {
        BetaVae::from_parts(encoder, self.decoder_net()?, 1, self.beta)
    }

    /// Assemble the perfect-proposal [`BetaVae`].
    pub fn perfect_vae(&self) -> Result<BetaVae> {
        self.vae_with_encoder(self.perfect_encoder()?)
    }
}

/// Monte-Carlo standard error of a correlated chain's mean, by batch means:
/// split into `n_batches` equal batches, take the standard deviation of the
/// batch means over √n_batches.
pub fn batch_means_se(samples: &[f64], n_batches: usize) -> f64 {
    assert!(n_batches >= 2 && samples.len() >= n_batches);
    let batch_len = samples.len() / n_batches;
    let used = batch_len * n_batches;
    let means: Vec<f64> = (0..n_batches)
        .map(|b| {
            samples[b * batch_len..(b + 1) * batch_len]
                .iter()
                .sum::<f64>()
                / batch_len as f64
        })
        .collect();
    let grand = samples[..used].iter().sum::<f64>() / used as f64;
    let var = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>()
        / (n_batches - 1) as f64;
    (var / n_batches as f64).sqrt()
}
