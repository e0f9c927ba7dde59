//! Downstream analysis on the completed datasets: sparse logistic
//! regression per draw, pooled across draws.
//!
//! Each of the M completions gets an independent L1-penalized logistic fit
//! (cyclic coordinate descent under a quadratic majorization of the
//! logistic loss). Per-column results are then pooled: the mean
//! coefficient, an empirical quantile CI over the M fits, the inclusion
//! probability `P_incl` (fraction of draws with an exactly nonzero
//! coefficient), and the combined variance `T = W + (1 + 1/M)·B` with the
//! between-draw variance B and within-draw variance W — W is 0 here
//! because a point LASSO fit carries no native variance, which makes the
//! quantile CIs the primary inferential route.
//!
//! Selection either keeps columns whose CI excludes zero or those with
//! `P_incl` above a threshold; `fdr` scores a selection against a known
//! causal set.

use std::collections::HashSet;
use std::path::Path;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{linear_quantile, required_draws_for_level};
use crate::nn::sigmoid;
use crate::samplers::ImputationSet;

/// One L1-penalized logistic fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    /// Unpenalized intercept.
    pub intercept: f64,
    /// Penalized coefficients, one per column.
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    /// Whether the KKT residual dropped below tolerance within the sweep
    /// budget. A `false` fit still holds the best iterate found.
    pub converged: bool,
    /// Coordinate-descent sweeps performed.
    pub iterations: usize,
}

/// Pooled per-column statistics over the M fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneSummary {
    pub column: String,
    /// Mean coefficient across draws — also the pooled point estimate.
    pub mean_coefficient: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Fraction of draws with an exactly nonzero coefficient.
    pub p_incl: f64,
    /// Combined variance `W + (1 + 1/M)·B` with W = 0.
    pub total_variance: f64,
}

/// Summary of M fits: per-column pooled statistics plus shared metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiFitSummary {
    pub genes: Vec<GeneSummary>,
    pub intercept_mean: f64,
    pub m: usize,
    pub ci_level: f64,
    pub lambda: f64,
}

/// How [`select_genes`] picks columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionCriterion {
    /// CI strictly excludes zero: low > 0 or high < 0.
    NonzeroCi,
    /// `P_incl` strictly above the threshold.
    PInclThreshold(f64),
}

/// A named selection with its optional FDR against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub criterion: String,
    pub genes: Vec<String>,
    pub n_selected: usize,
    /// Fraction of selected genes not in the causal set, when truth known.
    pub fdr: Option<f64>,
}

// ---------------------------------------------------------------------------
// Single-draw fit
// ---------------------------------------------------------------------------

/// Mean negative log-likelihood of logistic regression plus `λ‖coef‖₁`
/// (intercept unpenalized).
pub fn logistic_lasso_objective(
    x: ArrayView2<f64>,
    y: &[f64],
    intercept: f64,
    coef: &[f64],
    lambda: f64,
) -> f64 {
    let n = x.nrows();
    let mut loss = 0.0;
    for i in 0..n {
        let eta = intercept
            + x.row(i)
                .iter()
                .zip(coef)
                .map(|(xij, bj)| xij * bj)
                .sum::<f64>();
        // log(1 + e^eta) − y·eta, computed stably on both tails.
        let log1p_exp = if eta > 30.0 { eta } else { eta.exp().ln_1p() };
        loss += log1p_exp - y[i] * eta;
    }
    loss / n as f64 + lambda * coef.iter().map(|b| b.abs()).sum::<f64>()
}

/// Smallest λ at which the all-zero coefficient vector is optimal:
/// `max_j |(1/N)·Σ_i x_ij (ȳ − y_i)|`.
pub fn lambda_max(x: ArrayView2<f64>, y: &[f64]) -> f64 {
    let n = x.nrows();
    let y_bar = y.iter().sum::<f64>() / n as f64;
    (0..x.ncols())
        .map(|j| {
            let g: f64 = (0..n).map(|i| x[(i, j)] * (y_bar - y[i])).sum::<f64>() / n as f64;
            g.abs()
        })
        .fold(0.0, f64::max)
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn check_labels(x: ArrayView2<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::EmptyInput("design matrix is empty".to_string()));
    }
    if y.len() != x.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} rows",
            y.len(),
            x.nrows()
        )));
    }
    if let Some(bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidConfig(format!(
            "labels must be 0 or 1, got {bad}"
        )));
    }
    let positives = y.iter().filter(|&&v| v == 1.0).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::InvalidConfig(
            "labels must contain both classes".to_string(),
        ));
    }
    Ok(())
}

/// Fit L1-penalized logistic regression by cyclic coordinate descent.
///
/// Each coordinate step minimizes a quadratic upper bound on the logistic
/// loss (curvature `Σ_i x_ij²/(4N)`, from `p(1−p) ≤ 1/4`), so the objective
/// never increases. Iteration stops when the KKT residual drops below
/// `tol`: `|g_j| ≤ λ + tol` wherever the coefficient is zero and
/// `|g_j + λ·sign(b_j)| ≤ tol` elsewhere, with `|g_0| ≤ tol` for the
/// intercept. Hitting `max_iters` first returns the best iterate with
/// `converged = false`.
pub fn lasso_logistic(
    x: ArrayView2<f64>,
    y: &[f64],
    lambda: f64,
    tol: f64,
    max_iters: usize,
) -> Result<LassoFit> {
    check_labels(x, y)?;
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "lambda must be positive and finite, got {lambda}"
        )));
    }
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "tol must be positive and finite, got {tol}"
        )));
    }
    let (n, d) = x.dim();
    let n_f = n as f64;
    let y_bar = y.iter().sum::<f64>() / n_f;

    // Per-coordinate curvature bounds of the majorizer.
    let curvature: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| x[(i, j)] * x[(i, j)]).sum::<f64>() / (4.0 * n_f))
        .collect();
    if let Some(j) = curvature.iter().position(|&l| l == 0.0) {
        return Err(Error::ConstantColumn {
            name: format!("column {j} is identically zero"),
        });
    }

    let mut intercept = (y_bar / (1.0 - y_bar)).ln();
    let mut coef = vec![0.0f64; d];
    // Cached linear predictor, updated incrementally per coordinate step.
    let mut eta: Vec<f64> = vec![intercept; n];

    let mut objective = logistic_lasso_objective(x, y, intercept, &coef, lambda);
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < max_iters {
        sweeps += 1;
        // Intercept step: curvature bound 1/4, no penalty.
        let g0: f64 = eta.iter().zip(y).map(|(&e, &yi)| sigmoid(e) - yi).sum::<f64>() / n_f;
        let shift = -g0 / 0.25;
        intercept += shift;
        for e in &mut eta {
            *e += shift;
        }
        // Coefficient steps.
        for j in 0..d {
            let g: f64 = (0..n)
                .map(|i| x[(i, j)] * (sigmoid(eta[i]) - y[i]))
                .sum::<f64>()
                / n_f;
            let updated = soft_threshold(coef[j] - g / curvature[j], lambda / curvature[j]);
            let delta = updated - coef[j];
            if delta != 0.0 {
                for i in 0..n {
                    eta[i] += x[(i, j)] * delta;
                }
                coef[j] = updated;
            }
        }

        let next = logistic_lasso_objective(x, y, intercept, &coef, lambda);
        assert!(
            next <= objective + 1e-10,
            "objective increased in sweep {sweeps}: {objective} -> {next}"
        );
        objective = next;

        if kkt_residual(x, y, &eta, &coef, lambda) <= tol {
            converged = true;
            break;
        }
    }

    Ok(LassoFit {
        intercept,
        coefficients: coef,
        lambda,
        converged,
        iterations: sweeps,
    })
}

/// Largest first-order optimality violation at the current iterate.
fn kkt_residual(x: ArrayView2<f64>, y: &[f64], eta: &[f64], coef: &[f64], lambda: f64) -> f64 {
    let n_f = x.nrows() as f64;
    let resid: Vec<f64> = eta.iter().zip(y).map(|(&e, &yi)| sigmoid(e) - yi).collect();
    let mut worst = resid.iter().sum::<f64>().abs() / n_f; // intercept gradient
    for j in 0..x.ncols() {
        let g: f64 = (0..x.nrows()).map(|i| x[(i, j)] * resid[i]).sum::<f64>() / n_f;
        let violation = if coef[j] == 0.0 {
            (g.abs() - lambda).max(0.0)
        } else {
            (g + lambda * coef[j].signum()).abs()
        };
        worst = worst.max(violation);
    }
    worst
}

// ---------------------------------------------------------------------------
// Multi-draw fits and pooling
// ---------------------------------------------------------------------------

/// One fit per completed dataset, in draw order. Draw failures are
/// aggregated and reported by draw index.
pub fn fit_all(
    set: &ImputationSet,
    y: &[f64],
    lambda: f64,
    tol: f64,
    max_iters: usize,
) -> Result<Vec<LassoFit>> {
    let outcomes: Vec<std::result::Result<LassoFit, (usize, Error)>> = set
        .draws
        .par_iter()
        .enumerate()
        .map(|(m, draw)| {
            lasso_logistic(draw.view(), y, lambda, tol, max_iters).map_err(|e| (m, e))
        })
        .collect();
    let mut fits = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(fit) => fits.push(fit),
            Err((m, e)) => failures.push(format!("draw {m}: {e}")),
        }
    }
    if !failures.is_empty() {
        return Err(Error::DrawFailures {
            count: failures.len(),
            details: failures.join("\n"),
        });
    }
    Ok(fits)
}

/// Pool M fits into per-column statistics.
pub fn summarize(
    fits: &[LassoFit],
    column_names: &[String],
    ci_level: f64,
) -> Result<MultiFitSummary> {
    if fits.is_empty() {
        return Err(Error::EmptyInput("no fits to summarize".to_string()));
    }
    let m = fits.len();
    let required = required_draws_for_level(ci_level);
    if m < required {
        return Err(Error::TooFewDraws {
            level: ci_level,
            required,
            available: m,
        });
    }
    let d = fits[0].coefficients.len();
    if column_names.len() != d || fits.iter().any(|f| f.coefficients.len() != d) {
        return Err(Error::ShapeMismatch(format!(
            "{} column names for fits of {} coefficients",
            column_names.len(),
            d
        )));
    }
    let m_f = m as f64;
    let q_lo = (1.0 - ci_level) / 2.0;
    let q_hi = 1.0 - q_lo;
    let mut genes = Vec::with_capacity(d);
    for j in 0..d {
        let mut values: Vec<f64> = fits.iter().map(|f| f.coefficients[j]).collect();
        let mean = values.iter().sum::<f64>() / m_f;
        let nonzero = values.iter().filter(|&&v| v != 0.0).count();
        // Between-draw variance; within-draw variance is 0 for point fits.
        let between = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m_f - 1.0);
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite coefficients"));
        genes.push(GeneSummary {
            column: column_names[j].clone(),
            mean_coefficient: mean,
            ci_low: linear_quantile(&values, q_lo),
            ci_high: linear_quantile(&values, q_hi),
            p_incl: nonzero as f64 / m_f,
            total_variance: (1.0 + 1.0 / m_f) * between,
        });
    }
    Ok(MultiFitSummary {
        genes,
        intercept_mean: fits.iter().map(|f| f.intercept).sum::<f64>() / m_f,
        m,
        ci_level,
        lambda: fits[0].lambda,
    })
}

/// Columns passing the criterion, in summary order.
pub fn select_genes(summary: &MultiFitSummary, criterion: SelectionCriterion) -> Vec<String> {
    summary
        .genes
        .iter()
        .filter(|g| match criterion {
            SelectionCriterion::NonzeroCi => g.ci_low > 0.0 || g.ci_high < 0.0,
            SelectionCriterion::PInclThreshold(t) => g.p_incl > t,
        })
        .map(|g| g.column.clone())
        .collect()
}

/// False discovery rate of a selection: `|selected \ truth| / |selected|`,
/// defined as 0 for an empty selection.
pub fn fdr(selected: &[String], truth: &[String]) -> f64 {
    if selected.is_empty() {
        return 0.0;
    }
    let truth_set: HashSet<&str> = truth.iter().map(String::as_str).collect();
    let false_discoveries = selected
        .iter()
        .filter(|g| !truth_set.contains(g.as_str()))
        .count();
    false_discoveries as f64 / selected.len() as f64
}

/// Mean absolute difference between pooled coefficients and a reference
/// coefficient vector, in column order.
pub fn coefficient_mae(summary: &MultiFitSummary, truth: &[f64]) -> Result<f64> {
    if truth.len() != summary.genes.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} reference coefficients for {} columns",
            truth.len(),
            summary.genes.len()
        )));
    }
    let total: f64 = summary
        .genes
        .iter()
        .zip(truth)
        .map(|(g, t)| (g.mean_coefficient - t).abs())
        .sum();
    Ok(total / truth.len() as f64)
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

/// Write the draw × column coefficient matrix as CSV with header
/// `draw,intercept,<column names…>`.
pub fn write_coefficients_csv(
    fits: &[LassoFit],
    column_names: &[String],
    path: &Path,
) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let mut header = vec!["draw".to_string(), "intercept".to_string()];
    header.extend(column_names.iter().cloned());
    writer
        .write_record(&header)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    for (m, fit) in fits.iter().enumerate() {
        let mut record = vec![m.to_string(), format!("{}", fit.intercept)];
        record.extend(fit.coefficients.iter().map(|c| format!("{c}")));
        writer
            .write_record(&record)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Write a [`MultiFitSummary`] as pretty-printed JSON.
pub fn write_summary_json(summary: &MultiFitSummary, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(summary).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Write selection reports as pretty-printed JSON.
pub fn write_selections_json(reports: &[SelectionReport], path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(reports).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::{Method, SamplerConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::{Array1, Array2};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Deterministic non-separable fixture: N=20, two correlated features,
    /// labels flipped on a few rows so no perfect separator exists.
    fn fixture() -> (Array2<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 20;
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = 0.5 * a + 0.9 * rng.sample::<f64, _>(StandardNormal);
            x[(i, 0)] = a;
            x[(i, 1)] = b;
            let p = sigmoid(1.2 * a - 0.4 * b);
            y.push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
        }
        (x, y)
    }

    #[test]
    fn lambda_above_lambda_max_zeroes_every_coefficient() {
        let (x, y) = fixture();
        let lmax = lambda_max(x.view(), &y);
        let fit = lasso_logistic(x.view(), &y, lmax * 1.01, 1e-8, 500).unwrap();
        assert!(fit.converged);
        assert!(fit.coefficients.iter().all(|&c| c == 0.0), "{fit:?}");
        // Just below λ_max at least one coefficient activates.
        let fit = lasso_logistic(x.view(), &y, lmax * 0.9, 1e-8, 500).unwrap();
        assert!(fit.coefficients.iter().any(|&c| c != 0.0));
    }

    /// Brute-force oracle: grid over (b₁, b₂) with the intercept profiled
    /// out by bisection (the objective is convex and smooth in the
    /// intercept), refined around the incumbent three times.
    fn grid_oracle(x: ArrayView2<f64>, y: &[f64], lambda: f64) -> (f64, Vec<f64>) {
        let profile_intercept = |b: &[f64]| -> f64 {
            let (mut lo, mut hi) = (-10.0, 10.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let g: f64 = (0..x.nrows())
                    .map(|i| {
                        let eta = mid
                            + x.row(i).iter().zip(b).map(|(xij, bj)| xij * bj).sum::<f64>();
                        sigmoid(eta) - y[i]
                    })
                    .sum();
                if g > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let mut center = vec![0.0, 0.0];
        let mut width = 3.0;
        let mut best = (f64::INFINITY, 0.0, vec![0.0, 0.0]);
        for _ in 0..4 {
            let steps = 60;
            for i in 0..=steps {
                for j in 0..=steps {
                    let b = vec![
                        center[0] - width + 2.0 * width * i as f64 / steps as f64,
                        center[1] - width + 2.0 * width * j as f64 / steps as f64,
                    ];
                    let b0 = profile_intercept(&b);
                    let obj = logistic_lasso_objective(x, y, b0, &b, lambda);
                    if obj < best.0 {
                        best = (obj, b0, b.clone());
                    }
                }
            }
            center = best.2.clone();
            width /= 10.0;
        }
        (best.1, best.2)
    }

    #[test]
    fn coordinate_descent_matches_the_grid_oracle() {
        let (x, y) = fixture();
        let lambda = 0.1;
        let fit = lasso_logistic(x.view(), &y, lambda, 1e-10, 2000).unwrap();
        assert!(fit.converged);
        let (oracle_b0, oracle_b) = grid_oracle(x.view(), &y, lambda);
        for (got, want) in fit.coefficients.iter().zip(&oracle_b) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-3);
        }
        assert_abs_diff_eq!(fit.intercept, oracle_b0, epsilon = 1e-3);
        // The oracle never beats the fit by more than numerical slack.
        let fit_obj =
            logistic_lasso_objective(x.view(), &y, fit.intercept, &fit.coefficients, lambda);
        let oracle_obj = logistic_lasso_objective(x.view(), &y, oracle_b0, &oracle_b, lambda);
        assert!(fit_obj <= oracle_obj + 1e-6);
    }

    #[test]
    fn duplicating_every_row_leaves_the_fit_unchanged() {
        let (x, y) = fixture();
        let doubled_x = ndarray::concatenate![ndarray::Axis(0), x, x];
        let doubled_y: Vec<f64> = y.iter().chain(&y).copied().collect();
        let fit = lasso_logistic(x.view(), &y, 0.05, 1e-10, 2000).unwrap();
        let fit2 = lasso_logistic(doubled_x.view(), &doubled_y, 0.05, 1e-10, 2000).unwrap();
        for (a, b) in fit.coefficients.iter().zip(&fit2.coefficients) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(fit.intercept, fit2.intercept, epsilon = 1e-9);
    }

    #[test]
    fn kkt_holds_at_convergence() {
        let (x, y) = fixture();
        let lambda = 0.05;
        let fit = lasso_logistic(x.view(), &y, lambda, 1e-8, 2000).unwrap();
        assert!(fit.converged);
        let eta: Vec<f64> = (0..x.nrows())
            .map(|i| {
                fit.intercept
                    + x.row(i)
                        .iter()
                        .zip(&fit.coefficients)
                        .map(|(xij, bj)| xij * bj)
                        .sum::<f64>()
            })
            .collect();
        assert!(kkt_residual(x.view(), &y, &eta, &fit.coefficients, lambda) <= 1e-8);
    }

    #[test]
    fn single_class_labels_are_rejected() {
        let (x, _) = fixture();
        let all_ones = vec![1.0; x.nrows()];
        assert!(lasso_logistic(x.view(), &all_ones, 0.1, 1e-6, 100).is_err());
        let not_binary = vec![0.5; x.nrows()];
        assert!(lasso_logistic(x.view(), &not_binary, 0.1, 1e-6, 100).is_err());
    }

    #[test]
    fn exhausted_sweep_budget_reports_non_convergence() {
        let (x, y) = fixture();
        let fit = lasso_logistic(x.view(), &y, 0.01, 1e-12, 2).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 2);
    }

    fn fit_with(coefficients: Vec<f64>) -> LassoFit {
        LassoFit {
            intercept: 0.1,
            coefficients,
            lambda: 0.05,
            converged: true,
            iterations: 10,
        }
    }

    #[test]
    fn identical_fits_pool_to_degenerate_intervals() {
        let fits: Vec<LassoFit> = (0..25).map(|_| fit_with(vec![0.4, 0.0])).collect();
        let names = vec!["g0".to_string(), "g1".to_string()];
        let s = summarize(&fits, &names, 0.95).unwrap();
        assert_eq!(s.genes[0].ci_low, 0.4);
        assert_eq!(s.genes[0].ci_high, 0.4);
        assert_eq!(s.genes[0].p_incl, 1.0);
        // Identical draws: between-draw variance vanishes up to rounding.
        assert!(s.genes[0].total_variance < 1e-30);
        assert_eq!(s.genes[1].p_incl, 0.0);
        assert_eq!(s.m, 25);
    }

    #[test]
    fn inclusion_probability_counts_nonzero_draws_exactly() {
        let fits: Vec<LassoFit> = (0..100)
            .map(|m| fit_with(vec![if m < 40 { 0.0 } else { 0.3 }]))
            .collect();
        let s = summarize(&fits, &["g0".to_string()], 0.95).unwrap();
        assert_eq!(s.genes[0].p_incl, 0.6);
    }

    #[test]
    fn total_variance_matches_hand_arithmetic() {
        // Coefficients 1, 2, 3, 4 repeated five times: mean 2.5,
        // B = Σ(v−2.5)²/19 = 25/19, T = (1 + 1/20)·B = 21/20 · 25/19.
        let values = [1.0, 2.0, 3.0, 4.0];
        let fits: Vec<LassoFit> = (0..20).map(|m| fit_with(vec![values[m % 4]])).collect();
        let s = summarize(&fits, &["g0".to_string()], 0.95).unwrap();
        assert_abs_diff_eq!(s.genes[0].mean_coefficient, 2.5, epsilon = 1e-15);
        let b = 25.0 / 19.0;
        assert_abs_diff_eq!(
            s.genes[0].total_variance,
            (1.0 + 1.0 / 20.0) * b,
            epsilon = 1e-12
        );
    }

    #[test]
    fn too_few_fits_for_the_level_is_an_error() {
        let fits: Vec<LassoFit> = (0..10).map(|_| fit_with(vec![0.1])).collect();
        match summarize(&fits, &["g0".to_string()], 0.95).unwrap_err() {
            Error::TooFewDraws { required, .. } => assert_eq!(required, 20),
            other => panic!("expected TooFewDraws, got {other:?}"),
        }
    }

    #[test]
    fn selection_criteria_behave_strictly() {
        let gene = |name: &str, lo: f64, hi: f64, p: f64| GeneSummary {
            column: name.to_string(),
            mean_coefficient: 0.5 * (lo + hi),
            ci_low: lo,
            ci_high: hi,
            p_incl: p,
            total_variance: 0.0,
        };
        let summary = MultiFitSummary {
            genes: vec![
                gene("pos", 0.1, 0.5, 1.0),
                gene("span", -0.1, 0.5, 0.8),
                gene("neg", -0.6, -0.2, 0.7),
                gene("zero", 0.0, 0.4, 0.5),
            ],
            intercept_mean: 0.0,
            m: 100,
            ci_level: 0.95,
            lambda: 0.05,
        };
        assert_eq!(
            select_genes(&summary, SelectionCriterion::NonzeroCi),
            vec!["pos".to_string(), "neg".to_string()]
        );
        // Threshold selection is strict and antitone in t.
        let at = |t: f64| select_genes(&summary, SelectionCriterion::PInclThreshold(t));
        assert_eq!(at(0.75).len(), 2);
        assert_eq!(at(0.7).len(), 2); // strict: p_incl = 0.7 not selected
        assert_eq!(at(0.4).len(), 4);
        let mut last = usize::MAX;
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let n = at(t).len();
            assert!(n <= last);
            last = n;
        }
        assert!(at(1.0).iter().all(|g| at(0.0).contains(g)));
    }

    #[test]
    fn fdr_matches_the_reference_ratios() {
        let truth: Vec<String> = (0..50).map(|i| format!("true_{i}")).collect();
        // 31 selected, 7 of them false.
        let mut selected: Vec<String> = (0..24).map(|i| format!("true_{i}")).collect();
        selected.extend((0..7).map(|i| format!("false_{i}")));
        assert_abs_diff_eq!(fdr(&selected, &truth), 7.0 / 31.0, epsilon = 1e-15);
        assert!((fdr(&selected, &truth) - 0.226).abs() < 5e-4);
        // 25 selected, 2 false → exactly 8%.
        let mut selected: Vec<String> = (0..23).map(|i| format!("true_{i}")).collect();
        selected.extend((0..2).map(|i| format!("false_{i}")));
        assert_eq!(fdr(&selected, &truth), 2.0 / 25.0);
        assert_eq!(fdr(&selected, &truth), 0.08);
        // Subset of truth and empty selection are clean.
        assert_eq!(fdr(&truth[..5], &truth), 0.0);
        assert_eq!(fdr(&[], &truth), 0.0);
        // Relabeling both sets consistently changes nothing.
        let relabel =
            |v: &[String]| -> Vec<String> { v.iter().map(|g| format!("x_{g}")).collect() };
        assert_eq!(
            fdr(&relabel(&selected), &relabel(&truth)),
            fdr(&selected, &truth)
        );
    }

    #[test]
    fn coefficient_mae_compares_pooled_means() {
        let fits: Vec<LassoFit> = (0..20).map(|_| fit_with(vec![0.5, -0.5])).collect();
        let names = vec!["g0".to_string(), "g1".to_string()];
        let s = summarize(&fits, &names, 0.95).unwrap();
        let mae = coefficient_mae(&s, &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(mae, 0.5, epsilon = 1e-15);
        assert!(coefficient_mae(&s, &[0.0]).is_err());
    }

    #[test]
    fn fit_all_runs_per_draw_and_reports_failures_by_index() {
        let (x, y) = fixture();
        let mask = Array2::from_elem(x.dim(), false);
        let draws = vec![x.clone(), x.clone(), x.clone()];
        let set = ImputationSet {
            draws,
            mask,
            feature_means: Array1::zeros(2),
            feature_stds: Array1::ones(2),
            column_names: vec!["g0".into(), "g1".into()],
            row_ids: (0..x.nrows()).map(|i| format!("row_{i}")).collect(),
            traces: Vec::new(),
            config: SamplerConfig::defaults_for(Method::Pg),
            beta: 1.0,
            acceptance_rate: None,
            effective_sample_size: None,
        };
        let fits = fit_all(&set, &y, 0.05, 1e-8, 500).unwrap();
        assert_eq!(fits.len(), 3);
        assert_eq!(fits[0], fits[1]); // identical draws → identical fits

        let bad_y = vec![1.0; x.nrows()];
        match fit_all(&set, &bad_y, 0.05, 1e-8, 500).unwrap_err() {
            Error::DrawFailures { count, details } => {
                assert_eq!(count, 3);
                assert!(details.contains("draw 0"), "{details}");
            }
            other => panic!("expected DrawFailures, got {other:?}"),
        }
    }

    #[test]
    fn summary_is_invariant_to_draw_permutation() {
        let fits: Vec<LassoFit> = (0..30)
            .map(|m| fit_with(vec![m as f64 * 0.01, -(m as f64) * 0.02]))
            .collect();
        let mut shuffled = fits.clone();
        shuffled.reverse();
        shuffled.swap(3, 17);
        let names = vec!["g0".to_string(), "g1".to_string()];
        assert_eq!(
            summarize(&fits, &names, 0.9).unwrap(),
            summarize(&shuffled, &names, 0.9).unwrap()
        );
    }

    #[test]
    fn coefficient_csv_has_one_row_per_draw() {
        let fits: Vec<LassoFit> = (0..3).map(|m| fit_with(vec![m as f64, 1.0])).collect();
        let names = vec!["g0".to_string(), "g1".to_string()];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("coefs.csv");
        write_coefficients_csv(&fits, &names, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "draw,intercept,g0,g1");
        assert_eq!(lines[2], "1,0.1,1,1");
    }
}
