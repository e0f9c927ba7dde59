//! Samplers for the missing cells of a row, given a trained model.
//!
//! All four methods target (or approximate) the tempered predictive
//! distribution over the missing coordinates given the observed ones, in
//! which the decoder's Gaussian likelihood is raised to the power 1/β —
//! equivalently, every predictive variance is multiplied by β:
//!
//! * **single** — deterministic: alternate the encoder mean and decoder mean
//!   until the imputation stops moving. One completion, no uncertainty.
//! * **pg** (pseudo-Gibbs) — alternate `z ~ q(z | x)` with
//!   `x_mis ~ N(μ(z), β σ²(z))`. Exact only when the encoder equals the
//!   tempered posterior.
//! * **mwg** (Metropolis-within-Gibbs) — pseudo-Gibbs with the latent step
//!   passed through a Metropolis–Hastings correction, which restores the
//!   exact target regardless of encoder quality. When the encoder *is* the
//!   posterior, every proposal is accepted and the two chains coincide.
//! * **sir** (sampling-importance-resampling) — draw S latents from
//!   `q(z | x⁰)` once, weight by tempered likelihood of the *observed* cells
//!   times prior over proposal, resample M latents, decode each with
//!   β-scaled noise. Embarrassingly parallel, no burn-in.
//!
//! Chains and weights are computed in log space throughout; a wide matrix
//! would underflow anything else.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::betavae::{log_standard_normal, BetaVae, GaussianHead};
use crate::data_io::DataMatrix;
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Convergence tolerance used for the deterministic method inside
/// [`multiple_impute`], where there is no explicit tolerance argument.
pub const DEFAULT_SINGLE_TOL: f64 = 1e-6;

/// Which sampler fills the missing cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Single,
    Pg,
    Mwg,
    Sir,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Method::Single => "single",
            Method::Pg => "pg",
            Method::Mwg => "mwg",
            Method::Sir => "sir",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Method::Single),
            "pg" => Ok(Method::Pg),
            "mwg" => Ok(Method::Mwg),
            "sir" => Ok(Method::Sir),
            other => Err(Error::InvalidConfig(format!(
                "unknown method {other:?}; expected one of single, pg, mwg, sir"
            ))),
        }
    }
}

/// Sampler settings shared by all methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub method: Method,
    /// Chain length S for pg/mwg, proposal count S for sir, iteration cap
    /// for single.
    pub iterations: usize,
    /// Discarded prefix for pg/mwg; ignored by sir and single.
    pub burn_in: usize,
    /// Number of imputation draws M.
    pub m_draws: usize,
    pub seed: u64,
    /// Likelihood tempering β; `None` inherits the model's β.
    pub beta: Option<f64>,
}

impl SamplerConfig {
    /// Chain-length defaults (S=1000, burn-in 500, M=100) for a method.
    pub fn defaults_for(method: Method) -> Self {
        SamplerConfig {
            method,
            iterations: 1000,
            burn_in: 500,
            m_draws: 100,
            seed: 0,
            beta: None,
        }
    }

    /// The β the sampler will use with this model.
    pub fn effective_beta(&self, model: &BetaVae) -> f64 {
        self.beta.unwrap_or(model.beta)
    }

    /// Validate ranges and the per-method draw constraints; collects every
    /// violation.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.iterations == 0 {
            problems.push("iterations must be positive".to_string());
        }
        if self.burn_in >= self.iterations && self.iterations > 0 {
            problems.push(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            ));
        }
        if self.m_draws == 0 {
            problems.push("m_draws must be positive".to_string());
        }
        if let Some(beta) = self.beta {
            if !beta.is_finite() || beta <= 0.0 {
                problems.push(format!("beta must be positive and finite, got {beta}"));
            }
        }
        match self.method {
            Method::Pg | Method::Mwg => {
                if self.iterations > self.burn_in
                    && self.m_draws > self.iterations - self.burn_in
                {
                    problems.push(format!(
                        "m_draws ({}) cannot exceed the {} post-burn-in iterations",
                        self.m_draws,
                        self.iterations - self.burn_in
                    ));
                }
            }
            Method::Sir => {
                if self.iterations < self.m_draws {
                    problems.push(format!(
                        "sir needs iterations ({}) ≥ m_draws ({})",
                        self.iterations, self.m_draws
                    ));
                }
            }
            Method::Single => {}
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("\n")))
        }
    }
}

/// One state of a pg/mwg chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub latent: Array1<f64>,
    /// Full completion: observed values plus the current imputation.
    pub completion: Array1<f64>,
}

/// Output of a pg or mwg chain on one row.
#[derive(Debug, Clone)]
pub struct ChainRun {
    /// All S post-initialization states, in iteration order.
    pub states: Vec<ChainState>,
    /// The last M thinned completions.
    pub draws: Vec<Array1<f64>>,
    /// Per-iteration tempered log joint `(1/β)·log p(x|z) + log p(z)`.
    pub trace: Vec<f64>,
    /// Accepted fraction of latent proposals (mwg only).
    pub acceptance_rate: Option<f64>,
}

/// Output of the deterministic single imputation on one row.
#[derive(Debug, Clone)]
pub struct SingleRun {
    pub completion: Array1<f64>,
    /// Iterations actually performed.
    pub iterations: usize,
    /// Per-iteration log joint `log p(x|ẑ) + log p(ẑ)` at the mean iterates
    /// (untempered — the mean iteration itself does not involve β).
    pub trace: Vec<f64>,
}

/// Output of sampling-importance-resampling on one row.
#[derive(Debug, Clone)]
pub struct SirRun {
    /// M completions, one per resampled latent.
    pub draws: Vec<Array1<f64>>,
    /// Normalized importance weights of the S proposals.
    pub weights: Vec<f64>,
    /// `1 / Σ w²`: S when weights are uniform, smaller otherwise.
    pub effective_sample_size: f64,
    /// The latents behind `draws`, for diagnostics.
    pub resampled_latents: Vec<Array1<f64>>,
    /// Per-proposal tempered log joint of the observed coordinates.
    pub trace: Vec<f64>,
}

/// Per-row diagnostic trace kept by [`multiple_impute`].
#[derive(Debug, Clone, PartialEq)]
pub struct RowTrace {
    pub row: usize,
    pub row_id: String,
    /// One log-joint value per iteration (pg/mwg/single) or proposal (sir).
    pub values: Vec<f64>,
}

/// M completed matrices plus everything needed to interpret and persist them.
#[derive(Debug, Clone)]
pub struct ImputationSet {
    /// M completed N×D matrices in standardized units.
    pub draws: Vec<Array2<f64>>,
    /// Missingness of the input: `true` cells vary across draws, the rest are
    /// the input values.
    pub mask: Array2<bool>,
    pub feature_means: Array1<f64>,
    pub feature_stds: Array1<f64>,
    pub column_names: Vec<String>,
    pub row_ids: Vec<String>,
    /// Per-row sampler traces, ascending by row index.
    pub traces: Vec<RowTrace>,
    pub config: SamplerConfig,
    /// Resolved β the sampler actually used.
    pub beta: f64,
    /// Mean per-row acceptance rate (mwg only).
    pub acceptance_rate: Option<f64>,
    /// Mean per-row effective sample size (sir only).
    pub effective_sample_size: Option<f64>,
}

impl ImputationSet {
    /// Number of draws M.
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }
}

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

/// Draw the missing coordinates from the tempered decoder head:
/// `x_d ~ N(μ_d, β·σ_d²)` independently for each `d` in `missing_idx`.
pub fn power_likelihood_sample(
    head: &GaussianHead,
    missing_idx: &[usize],
    beta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "beta must be positive and finite, got {beta}"
        )));
    }
    let mut out = Vec::with_capacity(missing_idx.len());
    for &d in missing_idx {
        if d >= head.len() {
            return Err(Error::ShapeMismatch(format!(
                "missing index {d} out of range for a {}-dim head",
                head.len()
            )));
        }
        let eps: f64 = rng.sample(StandardNormal);
        out.push(head.mean[d] + (beta * head.variance[d]).sqrt() * eps);
    }
    Ok(out)
}

/// Normalize log weights with log-sum-exp. Returns the weights and their
/// effective sample size `1/Σw²`.
pub fn normalize_log_weights(log_weights: &[f64]) -> Result<(Vec<f64>, f64)> {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if log_weights.is_empty() || !max.is_finite() {
        return Err(Error::DegenerateWeights {
            max_log_weight: max,
        });
    }
    let unnorm: Vec<f64> = log_weights.iter().map(|&lw| (lw - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    let weights: Vec<f64> = unnorm.into_iter().map(|u| u / total).collect();
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    Ok((weights, ess))
}

/// Iteration numbers (1-based) of the last M thinned post-burn-in states:
/// stride `t = ⌊(S − burn_in)/M⌋`, picks `S − t·(M−1), …, S − t, S`.
fn thinned_iterations(iterations: usize, burn_in: usize, m_draws: usize) -> Vec<usize> {
    let stride = (iterations - burn_in) / m_draws;
    (0..m_draws)
        .map(|j| iterations - stride * (m_draws - 1 - j))
        .collect()
}

/// Indices of missing cells in a row mask.
fn missing_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(j, &m)| m.then_some(j))
        .collect()
}

/// The row with missing cells forced to the zero sentinel.
fn zero_filled(row: ArrayView1<f64>, mask: &[bool]) -> Array1<f64> {
    let mut x = row.to_owned();
    for (j, &m) in mask.iter().enumerate() {
        if m {
            x[j] = 0.0;
        }
    }
    x
}

// ---------------------------------------------------------------------------
// Single imputation
// ---------------------------------------------------------------------------

/// Deterministic imputation: alternate `ẑ ←` encoder mean of the current
/// completion and `x_mis ←` decoder mean at `ẑ`, until the largest absolute
/// change at a missing cell drops below `tol` or `max_iters` is reached.
pub fn single_impute(
    model: &BetaVae,
    row: ArrayView1<f64>,
    mask: &[bool],
    max_iters: usize,
    tol: f64,
) -> Result<SingleRun> {
    check_row(model, row, mask)?;
    if !tol.is_finite() || tol < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "tol must be non-negative and finite, got {tol}"
        )));
    }
    let missing = missing_indices(mask);
    let mut x = zero_filled(row, mask);
    let mut trace = Vec::new();
    if missing.is_empty() {
        return Ok(SingleRun {
            completion: x,
            iterations: 0,
            trace,
        });
    }
    let mut iterations = 0;
    for _ in 0..max_iters {
        let q = model.encode(x.view())?;
        let p = model.decode(q.mean.view())?;
        let mut max_change = 0.0f64;
        for &j in &missing {
            let updated = p.mean[j];
            if !updated.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("imputation iterate at iteration {}", iterations + 1),
                });
            }
            max_change = max_change.max((updated - x[j]).abs());
            x[j] = updated;
        }
        iterations += 1;
        trace.push(p.log_density(x.view())? + log_standard_normal(q.mean.view()));
        if max_change < tol {
            break;
        }
    }
    Ok(SingleRun {
        completion: x,
        iterations,
        trace,
    })
}

// ---------------------------------------------------------------------------
// Pseudo-Gibbs and Metropolis-within-Gibbs
// ---------------------------------------------------------------------------

/// Pseudo-Gibbs chain: `z ~ q(z|x)`, then `x_mis ~ N(μ(z), β σ²(z))`.
pub fn pseudo_gibbs(
    model: &BetaVae,
    row: ArrayView1<f64>,
    mask: &[bool],
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ChainRun> {
    run_chain(model, row, mask, cfg, rng, false)
}

/// Pseudo-Gibbs with each latent proposal corrected by Metropolis–Hastings,
/// so the chain targets the exact tempered conditional no matter how
/// miscalibrated the encoder is.
pub fn metropolis_within_gibbs(
    model: &BetaVae,
    row: ArrayView1<f64>,
    mask: &[bool],
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ChainRun> {
    run_chain(model, row, mask, cfg, rng, true)
}

/// Metropolis–Hastings acceptance probability for replacing `z_current` with
/// `z_proposed`, proposals drawn from `q(·|x_state)`:
///
/// ```text
/// a = min(1, p(x|z*)^{1/β} p(z*) q(z|x) / [ p(x|z)^{1/β} p(z) q(z*|x) ])
/// ```
///
/// evaluated over the full current completion `x_state`, in log space.
pub fn mwg_acceptance(
    model: &BetaVae,
    x_state: ArrayView1<f64>,
    z_current: ArrayView1<f64>,
    z_proposed: ArrayView1<f64>,
    beta: f64,
) -> Result<f64> {
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "beta must be positive and finite, got {beta}"
        )));
    }
    let q = model.encode(x_state)?;
    let p_current = model.decode(z_current)?;
    let p_proposed = model.decode(z_proposed)?;
    let log_a = log_acceptance(
        &q,
        x_state,
        z_current,
        &p_current,
        z_proposed,
        &p_proposed,
        beta,
    )?;
    Ok(log_a.min(0.0).exp())
}

#[allow(clippy::too_many_arguments)]
fn log_acceptance(
    q: &GaussianHead,
    x: ArrayView1<f64>,
    z_current: ArrayView1<f64>,
    p_current: &GaussianHead,
    z_proposed: ArrayView1<f64>,
    p_proposed: &GaussianHead,
    beta: f64,
) -> Result<f64> {
    let numer = p_proposed.log_density(x)? / beta
        + log_standard_normal(z_proposed)
        + q.log_density(z_current)?;
    let denom = p_current.log_density(x)? / beta
        + log_standard_normal(z_current)
        + q.log_density(z_proposed)?;
    Ok(numer - denom)
}

fn run_chain(
    model: &BetaVae,
    row: ArrayView1<f64>,
    mask: &[bool],
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
    metropolis: bool,
) -> Result<ChainRun> {
    cfg.validate()?;
    check_row(model, row, mask)?;
    let beta = cfg.effective_beta(model);
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "effective beta must be positive, got {beta}"
        )));
    }
    let missing = missing_indices(mask);
    let mut x = zero_filled(row, mask);
    let mut states = Vec::with_capacity(cfg.iterations);
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut accepted = 0usize;

    // MWG needs a current latent before the first accept/reject; initialize
    // from the proposal at the zero-filled completion.
    let mut z_current = if metropolis {
        Some(model.encode(x.view())?.sample(rng))
    } else {
        None
    };

    for s in 1..=cfg.iterations {
        let q = model.encode(x.view())?;
        let z_star = q.sample(rng);
        let p_head;
        let z_state;
        if metropolis {
            let z_cur = z_current.take().expect("initialized above");
            let p_proposed = model.decode(z_star.view())?;
            let p_cur = model.decode(z_cur.view())?;
            let log_a = log_acceptance(
                &q,
                x.view(),
                z_cur.view(),
                &p_cur,
                z_star.view(),
                &p_proposed,
                beta,
            )
            .map_err(|e| chain_error(e, s))?;
            let u: f64 = rng.random();
            if u.ln() < log_a {
                accepted += 1;
                z_state = z_star;
                p_head = p_proposed;
            } else {
                z_state = z_cur;
                p_head = p_cur;
            }
        } else {
            p_head = model.decode(z_star.view()).map_err(|e| chain_error(e, s))?;
            z_state = z_star;
        }

        let values = power_likelihood_sample(&p_head, &missing, beta, rng)
            .map_err(|e| chain_error(e, s))?;
        for (&j, &v) in missing.iter().zip(&values) {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("chain state at iteration {s}"),
                });
            }
            x[j] = v;
        }
        let log_joint = p_head.log_density(x.view())? / beta
            + log_standard_normal(z_state.view());
        trace.push(log_joint);
        states.push(ChainState {
            latent: z_state.clone(),
            completion: x.clone(),
        });
        if metropolis {
            z_current = Some(z_state);
        }
    }

    let draws = thinned_iterations(cfg.iterations, cfg.burn_in, cfg.m_draws)
        .into_iter()
        .map(|s| states[s - 1].completion.clone())
        .collect();
    Ok(ChainRun {
        states,
        draws,
        trace,
        acceptance_rate: metropolis.then(|| accepted as f64 / cfg.iterations as f64),
    })
}

fn chain_error(e: Error, iteration: usize) -> Error {
    match e {
        Error::NonFinite { context } => Error::NonFinite {
            context: format!("{context} (iteration {iteration})"),
        },
        other => other,
    }
}

fn check_row(model: &BetaVae, row: ArrayView1<f64>, mask: &[bool]) -> Result<()> {
    if row.len() != model.input_dim() || mask.len() != model.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "model expects {} columns, got row of {} with mask of {}",
            model.input_dim(),
            row.len(),
            mask.len()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Sampling-importance-resampling
// ---------------------------------------------------------------------------

/// SIR: S proposals from `q(z | x⁰)` with the missing cells zero-filled,
/// log weights `(1/β)·log p(x_obs|z) + log p(z) − log q(z|x⁰)` over the
/// observed coordinates only, multinomial resampling of M latents, then one
/// tempered decoder draw per resampled latent.
pub fn sir_impute(
    model: &BetaVae,
    row: ArrayView1<f64>,
    mask: &[bool],
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SirRun> {
    cfg.validate()?;
    check_row(model, row, mask)?;
    let beta = cfg.effective_beta(model);
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "effective beta must be positive, got {beta}"
        )));
    }
    let missing = missing_indices(mask);
    let observed: Vec<usize> = (0..mask.len()).filter(|&j| !mask[j]).collect();
    let x0 = zero_filled(row, mask);
    let q = model.encode(x0.view())?;

    let mut latents = Vec::with_capacity(cfg.iterations);
    let mut log_weights = Vec::with_capacity(cfg.iterations);
    let mut trace = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let z = q.sample(rng);
        let p = model.decode(z.view())?;
        let log_lik_obs = p.log_density_subset(x0.view(), Some(&observed))?;
        let log_prior = log_standard_normal(z.view());
        let log_joint = log_lik_obs / beta + log_prior;
        log_weights.push(log_joint - q.log_density(z.view())?);
        trace.push(log_joint);
        latents.push(z);
    }
    let (weights, effective_sample_size) = normalize_log_weights(&log_weights)?;

    // Multinomial resampling by inverse CDF on the cumulative weights.
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for &w in &weights {
        acc += w;
        cumulative.push(acc);
    }
    let mut draws = Vec::with_capacity(cfg.m_draws);
    let mut resampled_latents = Vec::with_capacity(cfg.m_draws);
    for _ in 0..cfg.m_draws {
        let u: f64 = rng.random();
        let idx = cumulative
            .partition_point(|&c| c <= u)
            .min(weights.len() - 1);
        let z = latents[idx].clone();
        let p = model.decode(z.view())?;
        let values = power_likelihood_sample(&p, &missing, beta, rng)?;
        let mut completion = x0.clone();
        for (&j, &v) in missing.iter().zip(&values) {
            completion[j] = v;
        }
        draws.push(completion);
        resampled_latents.push(z);
    }

    Ok(SirRun {
        draws,
        weights,
        effective_sample_size,
        resampled_latents,
        trace,
    })
}

// ---------------------------------------------------------------------------
// Multiple imputation over a whole matrix
// ---------------------------------------------------------------------------

struct RowResult {
    row: usize,
    missing: Vec<usize>,
    /// M value-vectors for the missing cells, in `missing` order.
    values: Vec<Vec<f64>>,
    trace: Vec<f64>,
    acceptance_rate: Option<f64>,
    effective_sample_size: Option<f64>,
}

/// Run the configured sampler independently on every row that has missing
/// cells and assemble M completed matrices.
///
/// Each row's RNG stream is derived from `(cfg.seed, row id)`, so the result
/// is independent of scheduling, thread count, and row order. Rows without
/// missing cells are copied verbatim into every draw; the deterministic
/// `single` method produces M identical completions.
pub fn multiple_impute(
    model: &BetaVae,
    data: &DataMatrix,
    cfg: &SamplerConfig,
) -> Result<ImputationSet> {
    cfg.validate()?;
    if model.input_dim() != data.n_cols() {
        return Err(Error::ShapeMismatch(format!(
            "model expects {} columns but the data has {}",
            model.input_dim(),
            data.n_cols()
        )));
    }
    let beta = cfg.effective_beta(model);
    if cfg.method != Method::Single && (!beta.is_finite() || beta <= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "effective beta must be positive, got {beta}"
        )));
    }

    let rows_with_missing: Vec<usize> = (0..data.n_rows())
        .filter(|&i| data.mask.row(i).iter().any(|&m| m))
        .collect();

    let outcomes: Vec<std::result::Result<RowResult, (usize, String, Error)>> =
        rows_with_missing
            .par_iter()
            .map(|&i| {
                impute_row(model, data, cfg, i).map_err(|e| (i, data.row_ids[i].clone(), e))
            })
            .collect();

    let mut failures = Vec::new();
    let mut results = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err((row, row_id, e)) => failures.push((row, row_id, e)),
        }
    }
    if !failures.is_empty() {
        failures.sort_by_key(|(row, _, _)| *row);
        let details = failures
            .iter()
            .map(|(_, id, e)| format!("{id}: {e}"))
            .collect::<Vec<_>>()
            .join("\n");
        return Err(Error::RowFailures {
            count: failures.len(),
            details,
        });
    }

    let mut draws = vec![data.values.clone(); cfg.m_draws];
    let mut traces = Vec::with_capacity(results.len());
    let mut acceptance_sum = 0.0;
    let mut acceptance_count = 0usize;
    let mut ess_sum = 0.0;
    let mut ess_count = 0usize;
    for r in &results {
        for (m, values) in r.values.iter().enumerate() {
            for (&j, &v) in r.missing.iter().zip(values) {
                draws[m][(r.row, j)] = v;
            }
        }
        traces.push(RowTrace {
            row: r.row,
            row_id: data.row_ids[r.row].clone(),
            values: r.trace.clone(),
        });
        if let Some(a) = r.acceptance_rate {
            acceptance_sum += a;
            acceptance_count += 1;
        }
        if let Some(e) = r.effective_sample_size {
            ess_sum += e;
            ess_count += 1;
        }
    }

    Ok(ImputationSet {
        draws,
        mask: data.mask.clone(),
        feature_means: data.feature_means.clone(),
        feature_stds: data.feature_stds.clone(),
        column_names: data.column_names.clone(),
        row_ids: data.row_ids.clone(),
        traces,
        config: *cfg,
        beta,
        acceptance_rate: (acceptance_count > 0).then(|| acceptance_sum / acceptance_count as f64),
        effective_sample_size: (ess_count > 0).then(|| ess_sum / ess_count as f64),
    })
}

fn impute_row(model: &BetaVae, data: &DataMatrix, cfg: &SamplerConfig, i: usize) -> Result<RowResult> {
    let mut rng = rng_for(cfg.seed, &format!("row/{}", data.row_ids[i]));
    let row = data.values.row(i);
    let mask: Vec<bool> = data.mask.row(i).iter().copied().collect();
    let missing = missing_indices(&mask);
    let pick = |completions: &[Array1<f64>]| -> Vec<Vec<f64>> {
        completions
            .iter()
            .map(|c| missing.iter().map(|&j| c[j]).collect())
            .collect()
    };
    match cfg.method {
        Method::Single => {
            let run = single_impute(model, row, &mask, cfg.iterations, DEFAULT_SINGLE_TOL)?;
            let values: Vec<f64> = missing.iter().map(|&j| run.completion[j]).collect();
            Ok(RowResult {
                row: i,
                missing,
                values: vec![values; cfg.m_draws],
                trace: run.trace,
                acceptance_rate: None,
                effective_sample_size: None,
            })
        }
        Method::Pg => {
            let run = pseudo_gibbs(model, row, &mask, cfg, &mut rng)?;
            Ok(RowResult {
                row: i,
                values: pick(&run.draws),
                missing,
                trace: run.trace,
                acceptance_rate: None,
                effective_sample_size: None,
            })
        }
        Method::Mwg => {
            let run = metropolis_within_gibbs(model, row, &mask, cfg, &mut rng)?;
            Ok(RowResult {
                row: i,
                values: pick(&run.draws),
                missing,
                trace: run.trace,
                acceptance_rate: run.acceptance_rate,
                effective_sample_size: None,
            })
        }
        Method::Sir => {
            let run = sir_impute(model, row, &mask, cfg, &mut rng)?;
            Ok(RowResult {
                row: i,
                values: pick(&run.draws),
                missing,
                trace: run.trace,
                acceptance_rate: None,
                effective_sample_size: Some(run.effective_sample_size),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conjugate::ConjugateModel;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand_chacha::rand_core::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn method_strings_round_trip() {
        for m in [Method::Single, Method::Pg, Method::Mwg, Method::Sir] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("gibbs".parse::<Method>().is_err());
    }

    #[test]
    fn config_validation_enforces_the_draw_constraints() {
        let mut cfg = SamplerConfig::defaults_for(Method::Pg);
        cfg.iterations = 100;
        cfg.burn_in = 50;
        cfg.m_draws = 51;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("post-burn-in"), "{msg}");
        cfg.m_draws = 50;
        cfg.validate().unwrap();

        let mut sir = SamplerConfig::defaults_for(Method::Sir);
        sir.iterations = 10;
        sir.burn_in = 0;
        sir.m_draws = 11;
        assert!(sir.validate().is_err());
        sir.m_draws = 10;
        sir.validate().unwrap();

        let mut multi = SamplerConfig::defaults_for(Method::Mwg);
        multi.iterations = 0;
        multi.m_draws = 0;
        multi.beta = Some(-1.0);
        let msg = multi.validate().unwrap_err().to_string();
        assert!(msg.contains("iterations"), "{msg}");
        assert!(msg.contains("m_draws"), "{msg}");
        assert!(msg.contains("beta"), "{msg}");
    }

    #[test]
    fn thinning_takes_the_last_m_strided_states() {
        assert_eq!(
            thinned_iterations(1000, 500, 100).iter().take(3).copied().collect::<Vec<_>>(),
            vec![505, 510, 515]
        );
        assert_eq!(*thinned_iterations(1000, 500, 100).last().unwrap(), 1000);
        // M equal to the post-burn-in span takes every state.
        assert_eq!(thinned_iterations(10, 5, 5), vec![6, 7, 8, 9, 10]);
        assert_eq!(thinned_iterations(10, 5, 1), vec![10]);
        // All iterations land after burn-in.
        for (s, b, m) in [(1000usize, 500usize, 100usize), (37, 11, 13), (8, 0, 8)] {
            let picks = thinned_iterations(s, b, m);
            assert_eq!(picks.len(), m);
            assert!(picks.iter().all(|&p| p > b && p <= s));
            assert!(picks.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn power_sampling_at_beta_one_is_the_plain_decoder_draw() {
        let head = GaussianHead {
            mean: array![1.0, -2.0, 0.5],
            variance: array![0.25, 1.0, 4.0],
        };
        // Same RNG stream, β=1: power sampling must reproduce mean + σ·ε.
        let mut r1 = rng(7);
        let drawn = power_likelihood_sample(&head, &[0, 1, 2], 1.0, &mut r1).unwrap();
        let mut r2 = rng(7);
        for (d, &v) in drawn.iter().enumerate() {
            let eps: f64 = r2.sample(StandardNormal);
            assert_eq!(v, head.mean[d] + head.variance[d].sqrt() * eps);
        }
    }

    #[test]
    fn power_sampling_moments_scale_with_beta() {
        let head = GaussianHead {
            mean: array![2.0],
            variance: array![0.5],
        };
        let n = 100_000;
        for beta in [1.0, 4.0] {
            let mut r = rng(13);
            let mut sum = 0.0;
            let mut ss = 0.0;
            for _ in 0..n {
                let v = power_likelihood_sample(&head, &[0], beta, &mut r).unwrap()[0];
                sum += v;
                ss += v * v;
            }
            let mean = sum / n as f64;
            let var = ss / n as f64 - mean * mean;
            let target = beta * 0.5;
            assert!(
                (var - target).abs() < 0.05 * target,
                "β={beta}: var {var} vs {target}"
            );
            let mean_tol = 3.0 * (target / n as f64).sqrt();
            assert!((mean - 2.0).abs() < mean_tol, "β={beta}: mean {mean}");
        }
    }

    #[test]
    fn uniform_log_weights_normalize_to_uniform() {
        let (w, ess) = normalize_log_weights(&[-3.5; 8]).unwrap();
        for &wi in &w {
            assert_abs_diff_eq!(wi, 0.125, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(ess, 8.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_weights_error_carries_the_max() {
        let err = normalize_log_weights(&[f64::NEG_INFINITY; 4]).unwrap_err();
        match err {
            Error::DegenerateWeights { max_log_weight } => {
                assert!(max_log_weight.is_infinite());
            }
            other => panic!("expected DegenerateWeights, got {other:?}"),
        }
    }

    #[test]
    fn ess_is_bounded_by_the_proposal_count() {
        let (_, ess) = normalize_log_weights(&[0.0, -1.0, -2.0, -0.5]).unwrap();
        assert!(ess > 1.0 && ess < 4.0);
    }

    fn toy_vae() -> (ConjugateModel, BetaVae) {
        let toy = ConjugateModel::new(vec![1.1, -0.6], vec![0.2, 0.4], 2.0).unwrap();
        let vae = toy.perfect_vae().unwrap();
        (toy, vae)
    }

    #[test]
    fn single_impute_returns_unmasked_rows_immediately() {
        let (_, vae) = toy_vae();
        let row = array![0.7, -0.2];
        let run = single_impute(&vae, row.view(), &[false, false], 50, 1e-8).unwrap();
        assert_eq!(run.iterations, 0);
        assert_eq!(run.completion, row);
    }

    #[test]
    fn single_impute_reaches_the_affine_fixed_point() {
        // With linear heads the iteration is affine in the imputed value:
        //   z ← w0·x0 + w1·x1,  x1 ← a1·z
        // so the fixed point solves x1 = a1·(w0·x0 + w1·x1) by hand.
        let (toy, vae) = toy_vae();
        let all = [0usize, 1];
        let (_, var) = toy.posterior_given(&[0.0, 0.0], &all);
        let tau = 1.0 / var;
        let w0 = toy.loadings[0] / (toy.beta * toy.noise_vars[0]) / tau;
        let w1 = toy.loadings[1] / (toy.beta * toy.noise_vars[1]) / tau;
        let a1 = toy.loadings[1];
        let x0 = 0.9;
        let fixed = a1 * w0 * x0 / (1.0 - a1 * w1);

        let run = single_impute(&vae, array![x0, 0.0].view(), &[false, true], 500, 1e-12).unwrap();
        assert_abs_diff_eq!(run.completion[1], fixed, epsilon = 1e-8);
        assert_eq!(run.completion[0], x0);

        // Re-running on its own output moves nothing beyond tol.
        let again = single_impute(
            &vae,
            run.completion.view(),
            &[false, true],
            500,
            1e-12,
        )
        .unwrap();
        assert_abs_diff_eq!(again.completion[1], run.completion[1], epsilon = 1e-10);
    }

    #[test]
    fn chains_never_touch_observed_cells() {
        let (_, vae) = toy_vae();
        let row = array![0.9, 0.0];
        let mask = [false, true];
        for metropolis in [false, true] {
            let cfg = SamplerConfig {
                iterations: 50,
                burn_in: 10,
                m_draws: 20,
                ..SamplerConfig::defaults_for(if metropolis { Method::Mwg } else { Method::Pg })
            };
            let mut r = rng(3);
            let run = run_chain(&vae, row.view(), &mask, &cfg, &mut r, metropolis).unwrap();
            assert_eq!(run.states.len(), 50);
            assert_eq!(run.draws.len(), 20);
            assert_eq!(run.trace.len(), 50);
            for state in &run.states {
                assert_eq!(state.completion[0], 0.9); // bit-identical
            }
            for draw in &run.draws {
                assert_eq!(draw[0], 0.9);
            }
            assert_eq!(run.acceptance_rate.is_some(), metropolis);
            if let Some(a) = run.acceptance_rate {
                assert!((0.0..=1.0).contains(&a));
            }
        }
    }

    #[test]
    fn mwg_acceptance_is_one_for_a_null_move() {
        let (_, vae) = toy_vae();
        let z = array![0.4];
        let a = mwg_acceptance(
            &vae,
            array![0.5, -0.1].view(),
            z.view(),
            z.view(),
            2.0,
        )
        .unwrap();
        assert_eq!(a, 1.0);
    }

    /// Hand fixture: D=1, loading 1, unit variances everywhere, β=1, x=0.
    /// The four log densities differ only in their quadratic terms:
    ///   log p(x|z*) − log p(x|z) = −½(0−1)² + ½(0−0)² = −½
    ///   log p(z*) − log p(z)     = −½
    ///   log q(z|x) − log q(z*|x) = 0 − (−½) = +½     (q centered at 0)
    /// so a = exp(−½).
    #[test]
    fn mwg_acceptance_matches_hand_arithmetic() {
        let toy = ConjugateModel::new(vec![1.0], vec![1.0], 1.0).unwrap();
        // Encoder q(z|x) = N(0·x + 0, 1): weights zero, variance one.
        let encoder = toy.encoder_net(&[0.0], 0.0, 1.0).unwrap();
        let vae = toy.vae_with_encoder(encoder).unwrap();
        let a = mwg_acceptance(
            &vae,
            array![0.0].view(),
            array![0.0].view(),
            array![1.0].view(),
            1.0,
        )
        .unwrap();
        assert_abs_diff_eq!(a, (-0.5f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn sir_with_one_proposal_gives_unit_weight_and_shared_latent() {
        let (_, vae) = toy_vae();
        let cfg = SamplerConfig {
            iterations: 1,
            burn_in: 0,
            m_draws: 1,
            ..SamplerConfig::defaults_for(Method::Sir)
        };
        // S = 1 with several draws requires m_draws ≤ S; use repeated runs
        // for the shared-latent claim instead: draw M=1 from S=1 twice.
        let mut r = rng(5);
        let run = sir_impute(&vae, array![0.9, 0.0].view(), &[false, true], &cfg, &mut r).unwrap();
        assert_eq!(run.weights, vec![1.0]);
        assert_abs_diff_eq!(run.effective_sample_size, 1.0, epsilon = 1e-12);
        assert_eq!(run.resampled_latents.len(), 1);
        assert_eq!(run.draws[0][0], 0.9);
    }

    #[test]
    fn sir_draws_share_latents_but_differ_in_decoder_noise() {
        let (_, vae) = toy_vae();
        // Encoder with near-zero variance: all S proposals are effectively
        // the same latent, so weights are uniform and draws differ only
        // through the decoder noise.
        let cfg = SamplerConfig {
            iterations: 4,
            burn_in: 0,
            m_draws: 4,
            ..SamplerConfig::defaults_for(Method::Sir)
        };
        let mut r = rng(11);
        let run = sir_impute(&vae, array![0.9, 0.0].view(), &[false, true], &cfg, &mut r).unwrap();
        let first = run.draws[0][1];
        assert!(
            run.draws.iter().skip(1).any(|d| d[1] != first),
            "decoder noise should differentiate draws"
        );
    }

    #[test]
    fn multiple_impute_copies_complete_data_verbatim() {
        let (_, vae) = toy_vae();
        let data = two_column_data(&[(0.5, -0.2), (1.0, 0.3)], &[]);
        let cfg = SamplerConfig {
            iterations: 20,
            burn_in: 5,
            m_draws: 3,
            seed: 9,
            ..SamplerConfig::defaults_for(Method::Pg)
        };
        let set = multiple_impute(&vae, &data, &cfg).unwrap();
        assert_eq!(set.n_draws(), 3);
        for draw in &set.draws {
            assert_eq!(draw, &data.values);
        }
        assert!(set.traces.is_empty());
        assert_eq!(set.acceptance_rate, None);
        assert_eq!(set.effective_sample_size, None);
    }

    /// Hand-built standardized 2-column matrix with chosen missing cells.
    fn two_column_data(rows: &[(f64, f64)], missing: &[(usize, usize)]) -> DataMatrix {
        let n = rows.len();
        let mut values = Array2::zeros((n, 2));
        for (i, &(a, b)) in rows.iter().enumerate() {
            values[(i, 0)] = a;
            values[(i, 1)] = b;
        }
        let mut mask = Array2::from_elem((n, 2), false);
        for &(i, j) in missing {
            mask[(i, j)] = true;
            values[(i, j)] = 0.0;
        }
        DataMatrix {
            values,
            mask,
            feature_means: array![0.0, 0.0],
            feature_stds: array![1.0, 1.0],
            column_names: vec!["a".into(), "b".into()],
            row_ids: (0..n).map(|i| format!("row_{i}")).collect(),
        }
    }

    #[test]
    fn multiple_impute_is_invariant_to_row_order() {
        let (_, vae) = toy_vae();
        let data = two_column_data(
            &[(0.5, 0.0), (1.0, 0.3), (0.0, -0.7), (0.2, 0.0)],
            &[(0, 1), (2, 0), (3, 1)],
        );
        let permuted = data.select_rows(&[2, 0, 3, 1]).unwrap();
        let cfg = SamplerConfig {
            iterations: 30,
            burn_in: 10,
            m_draws: 5,
            seed: 21,
            ..SamplerConfig::defaults_for(Method::Mwg)
        };
        let set = multiple_impute(&vae, &data, &cfg).unwrap();
        let set_perm = multiple_impute(&vae, &permuted, &cfg).unwrap();
        // Row 0 of `data` is row 1 of `permuted`, etc.
        let back = [1usize, 3, 0, 2]; // where each original row went
        for m in 0..5 {
            for (orig, &perm_pos) in back.iter().enumerate() {
                assert_eq!(
                    set.draws[m].row(orig),
                    set_perm.draws[m].row(perm_pos),
                    "draw {m}, row {orig}"
                );
            }
        }
    }

    #[test]
    fn multiple_impute_single_method_duplicates_the_deterministic_completion() {
        let (_, vae) = toy_vae();
        let data = two_column_data(&[(0.9, 0.0), (0.4, 0.1)], &[(0, 1)]);
        let cfg = SamplerConfig {
            iterations: 100,
            burn_in: 0,
            m_draws: 4,
            seed: 2,
            ..SamplerConfig::defaults_for(Method::Single)
        };
        let set = multiple_impute(&vae, &data, &cfg).unwrap();
        for m in 1..4 {
            assert_eq!(set.draws[m], set.draws[0]);
        }
        // Observed cells equal the input in every draw.
        for draw in &set.draws {
            assert_eq!(draw[(0, 0)], 0.9);
            assert_eq!(draw.row(1), data.values.row(1));
        }
    }

    #[test]
    fn multiple_impute_reports_acceptance_and_ess_by_method() {
        let (_, vae) = toy_vae();
        let data = two_column_data(&[(0.9, 0.0)], &[(0, 1)]);
        let mwg_cfg = SamplerConfig {
            iterations: 40,
            burn_in: 10,
            m_draws: 5,
            seed: 3,
            ..SamplerConfig::defaults_for(Method::Mwg)
        };
        let set = multiple_impute(&vae, &data, &mwg_cfg).unwrap();
        assert!(set.acceptance_rate.is_some());
        assert!(set.effective_sample_size.is_none());
        assert_eq!(set.traces.len(), 1);
        assert_eq!(set.traces[0].values.len(), 40);

        let sir_cfg = SamplerConfig {
            iterations: 64,
            burn_in: 0,
            m_draws: 8,
            seed: 3,
            ..SamplerConfig::defaults_for(Method::Sir)
        };
        let set = multiple_impute(&vae, &data, &sir_cfg).unwrap();
        assert!(set.acceptance_rate.is_none());
        let ess = set.effective_sample_size.unwrap();
        assert!(ess >= 1.0 && ess <= 64.0);
    }
}
