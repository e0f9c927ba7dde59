//! Scoring imputations against withheld ground truth.
//!
//! Given the M completed matrices of an [`ImputationSet`] and the true
//! (standardized) values of the masked cells, this module computes:
//!
//! * **MAE** — the per-cell point estimate is the mean over the M draws;
//!   errors are averaged per row first, then across rows, so every row
//!   weighs the same regardless of how many cells it lost.
//! * **Interval coverage** — per-cell confidence intervals from empirical
//!   quantiles of the M draws, then the fraction of cells (pooled) whose
//!   truth lands inside, endpoints inclusive.
//! * **Percentile coverage** — for each percentile p, the fraction of cells
//!   whose truth is at or below the per-cell p-quantile; a calibrated
//!   sampler yields ≈ p.
//!
//! Quantiles use linear interpolation between order statistics at position
//! `q·(M−1)` (0-indexed), so results are bit-reproducible across platforms.

use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data_io::GroundTruthCell;
use crate::error::{Error, Result};
use crate::samplers::{ImputationSet, RowTrace};

/// Interval levels scored by default.
pub const DEFAULT_COVERAGE_LEVELS: [f64; 5] = [0.5, 0.8, 0.9, 0.95, 0.99];

/// Draw-quantile percentiles scored by default.
pub const DEFAULT_PERCENTILES: [f64; 5] = [0.25, 0.5, 0.75, 0.95, 0.99];

/// Summary scores for one imputation run.
///
/// `coverage` and `percentile_coverage` are ordered (key, fraction) pairs —
/// keys stay exact floats instead of lossy JSON map strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae: f64,
    /// (nominal level, empirical fraction covered), pooled over cells.
    pub coverage: Vec<(f64, f64)>,
    /// (percentile p, fraction of cells with truth ≤ the p-quantile).
    pub percentile_coverage: Vec<(f64, f64)>,
    /// Number of ground-truth cells evaluated.
    pub n_cells: usize,
}

/// Per-cell point estimates: masked cells become the mean over the M draws,
/// observed cells keep their input value.
pub fn point_estimates(set: &ImputationSet) -> Array2<f64> {
    let mut est = set.draws[0].clone();
    let m = set.n_draws() as f64;
    for ((i, j), masked) in set.mask.indexed_iter() {
        if *masked {
            est[(i, j)] = set.draws.iter().map(|d| d[(i, j)]).sum::<f64>() / m;
        }
    }
    est
}

fn check_truth(set: &ImputationSet, truth: &[GroundTruthCell]) -> Result<()> {
    if truth.is_empty() {
        return Err(Error::EmptyInput(
            "ground-truth cell list is empty".to_string(),
        ));
    }
    let (n, d) = set.mask.dim();
    for cell in truth {
        if cell.row >= n || cell.col >= d {
            return Err(Error::ShapeMismatch(format!(
                "ground-truth cell ({}, {}) outside a {n}×{d} matrix",
                cell.row, cell.col
            )));
        }
        if !set.mask[(cell.row, cell.col)] {
            return Err(Error::ShapeMismatch(format!(
                "ground-truth cell ({}, {}) is not masked in the imputed data",
                cell.row, cell.col
            )));
        }
    }
    Ok(())
}

/// Mean absolute error of the point estimates at the ground-truth cells:
/// per-row mean first, then mean over the rows that have truth cells.
pub fn mae(set: &ImputationSet, truth: &[GroundTruthCell]) -> Result<f64> {
    check_truth(set, truth)?;
    let est = point_estimates(set);
    let mut per_row: std::collections::BTreeMap<usize, (f64, usize)> =
        std::collections::BTreeMap::new();
    for cell in truth {
        let err = (est[(cell.row, cell.col)] - cell.value).abs();
        let entry = per_row.entry(cell.row).or_insert((0.0, 0));
        entry.0 += err;
        entry.1 += 1;
    }
    let row_means: Vec<f64> = per_row
        .values()
        .map(|&(sum, count)| sum / count as f64)
        .collect();
    Ok(row_means.iter().sum::<f64>() / row_means.len() as f64)
}

/// Empirical quantile of an ascending-sorted slice: linear interpolation
/// between order statistics at position `q·(n−1)`.
pub fn linear_quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Draws needed to resolve a two-sided interval at `level`: `⌈1/(1−level)⌉`
/// (20 for a 95% interval).
pub fn required_draws_for_level(level: f64) -> usize {
    // Nudge before ceil so 1/(1−0.95) = 20.000…04 still resolves to 20.
    (1.0 / (1.0 - level) - 1e-9).ceil() as usize
}

/// Draws needed to resolve the `p`-th quantile: `⌈1/min(p, 1−p)⌉`.
pub fn required_draws_for_percentile(p: f64) -> usize {
    (1.0 / p.min(1.0 - p) - 1e-9).ceil() as usize
}

fn check_level(level: f64, available: usize) -> Result<()> {
    if !(0.0..1.0).contains(&level) || level <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "interval level must lie strictly between 0 and 1, got {level}"
        )));
    }
    let required = required_draws_for_level(level);
    if available < required {
        return Err(Error::TooFewDraws {
            level,
            required,
            available,
        });
    }
    Ok(())
}

fn check_percentile(p: f64, available: usize) -> Result<()> {
    if p <= 0.0 || p >= 1.0 {
        return Err(Error::InvalidConfig(format!(
            "percentile must lie strictly between 0 and 1, got {p}"
        )));
    }
    let required = required_draws_for_percentile(p);
    if available < required {
        return Err(Error::TooFewDraws {
            level: p,
            required,
            available,
        });
    }
    Ok(())
}

/// Ascending draws at one masked cell.
fn sorted_cell_draws(set: &ImputationSet, row: usize, col: usize) -> Vec<f64> {
    let mut draws: Vec<f64> = set.draws.iter().map(|d| d[(row, col)]).collect();
    draws.sort_by(|a, b| a.partial_cmp(b).expect("draws are finite"));
    draws
}

/// Per-cell `(low, high)` confidence interval at `level`, in truth-cell
/// order: empirical quantiles at `(1−level)/2` and `(1+level)/2`.
pub fn confidence_intervals(
    set: &ImputationSet,
    truth: &[GroundTruthCell],
    level: f64,
) -> Result<Vec<(f64, f64)>> {
    check_truth(set, truth)?;
    check_level(level, set.n_draws())?;
    let q_lo = (1.0 - level) / 2.0;
    let q_hi = 1.0 - q_lo;
    Ok(truth
        .iter()
        .map(|cell| {
            let draws = sorted_cell_draws(set, cell.row, cell.col);
            (linear_quantile(&draws, q_lo), linear_quantile(&draws, q_hi))
        })
        .collect())
}

/// Fraction of ground-truth cells whose value falls inside its per-cell
/// interval at `level`, endpoints inclusive, pooled over all cells.
pub fn empirical_coverage(
    set: &ImputationSet,
    truth: &[GroundTruthCell],
    level: f64,
) -> Result<f64> {
    let intervals = confidence_intervals(set, truth, level)?;
    let covered = truth
        .iter()
        .zip(&intervals)
        .filter(|(cell, (lo, hi))| *lo <= cell.value && cell.value <= *hi)
        .count();
    Ok(covered as f64 / truth.len() as f64)
}

/// For each percentile p: the fraction of cells whose truth is at or below
/// the per-cell p-quantile of the draws. Calibrated draws give ≈ p.
pub fn percentile_coverage(
    set: &ImputationSet,
    truth: &[GroundTruthCell],
    percentiles: &[f64],
) -> Result<Vec<(f64, f64)>> {
    check_truth(set, truth)?;
    for &p in percentiles {
        check_percentile(p, set.n_draws())?;
    }
    let per_cell: Vec<Vec<f64>> = truth
        .iter()
        .map(|cell| sorted_cell_draws(set, cell.row, cell.col))
        .collect();
    Ok(percentiles
        .iter()
        .map(|&p| {
            let below = truth
                .iter()
                .zip(&per_cell)
                .filter(|(cell, draws)| cell.value <= linear_quantile(draws, p))
                .count();
            (p, below as f64 / truth.len() as f64)
        })
        .collect())
}

/// Full scoring pass: MAE plus coverage at the given levels and percentiles.
pub fn evaluate(
    set: &ImputationSet,
    truth: &[GroundTruthCell],
    levels: &[f64],
    percentiles: &[f64],
) -> Result<EvalReport> {
    let mae = mae(set, truth)?;
    let mut coverage = Vec::with_capacity(levels.len());
    for &level in levels {
        coverage.push((level, empirical_coverage(set, truth, level)?));
    }
    let percentile_coverage = percentile_coverage(set, truth, percentiles)?;
    Ok(EvalReport {
        mae,
        coverage,
        percentile_coverage,
        n_cells: truth.len(),
    })
}

// ---------------------------------------------------------------------------
// Plot-ready artifacts
// ---------------------------------------------------------------------------

/// Write per-iteration sampler traces as CSV records
/// `row_id,iteration,log_joint` (iteration 1-based).
pub fn write_trace_csv(traces: &[RowTrace], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    writer
        .write_record(["row_id", "iteration", "log_joint"])
        .map_err(|e| csv_io(path, e))?;
    for trace in traces {
        for (s, value) in trace.values.iter().enumerate() {
            writer
                .write_record([
                    trace.row_id.as_str(),
                    &(s + 1).to_string(),
                    &format!("{value}"),
                ])
                .map_err(|e| csv_io(path, e))?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Write coverage deviations as CSV records `level,empirical,deviation`.
pub fn write_coverage_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    writer
        .write_record(["level", "empirical", "deviation"])
        .map_err(|e| csv_io(path, e))?;
    for &(level, empirical) in &report.coverage {
        writer
            .write_record([
                format!("{level}"),
                format!("{empirical}"),
                format!("{}", empirical - level),
            ])
            .map_err(|e| csv_io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Write ranked truth-versus-estimate scatter data with the interval at
/// `level`: CSV records `rank,row_id,column,truth,estimate,low,high`,
/// ascending by truth.
pub fn write_scatter_csv(
    set: &ImputationSet,
    truth: &[GroundTruthCell],
    level: f64,
    path: &Path,
) -> Result<()> {
    let est = point_estimates(set);
    let intervals = confidence_intervals(set, truth, level)?;
    let mut rows: Vec<(f64, String, String, f64, f64, f64)> = truth
        .iter()
        .zip(&intervals)
        .map(|(cell, &(lo, hi))| {
            (
                cell.value,
                set.row_ids[cell.row].clone(),
                set.column_names[cell.col].clone(),
                est[(cell.row, cell.col)],
                lo,
                hi,
            )
        })
        .collect();
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite truth values"));
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    writer
        .write_record(["rank", "row_id", "column", "truth", "estimate", "low", "high"])
        .map_err(|e| csv_io(path, e))?;
    for (rank, (value, row_id, column, estimate, lo, hi)) in rows.iter().enumerate() {
        writer
            .write_record([
                (rank + 1).to_string(),
                row_id.clone(),
                column.clone(),
                format!("{value}"),
                format!("{estimate}"),
                format!("{lo}"),
                format!("{hi}"),
            ])
            .map_err(|e| csv_io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Write an [`EvalReport`] as pretty-printed JSON.
pub fn write_report_json(report: &EvalReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::json(path, e))?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(json.as_bytes())
        .and_then(|_| file.write_all(b"\n"))
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::{Method, SamplerConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::Array1;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Build a 2-column ImputationSet from explicit per-draw values at the
    /// masked cells. `cells` lists (row, col); `draw_values[m]` matches it.
    fn set_from_draws(
        n_rows: usize,
        cells: &[(usize, usize)],
        draw_values: &[Vec<f64>],
    ) -> ImputationSet {
        let mut mask = Array2::from_elem((n_rows, 2), false);
        for &(i, j) in cells {
            mask[(i, j)] = true;
        }
        let base = Array2::zeros((n_rows, 2));
        let draws = draw_values
            .iter()
            .map(|values| {
                let mut d = base.clone();
                for (&(i, j), &v) in cells.iter().zip(values) {
                    d[(i, j)] = v;
                }
                d
            })
            .collect();
        ImputationSet {
            draws,
            mask,
            feature_means: Array1::zeros(2),
            feature_stds: Array1::ones(2),
            column_names: vec!["a".into(), "b".into()],
            row_ids: (0..n_rows).map(|i| format!("row_{i}")).collect(),
            traces: Vec::new(),
            config: SamplerConfig::defaults_for(Method::Pg),
            beta: 1.0,
            acceptance_rate: None,
            effective_sample_size: None,
        }
    }

    fn cells_to_truth(cells: &[(usize, usize)], values: &[f64]) -> Vec<GroundTruthCell> {
        cells
            .iter()
            .zip(values)
            .map(|(&(row, col), &value)| GroundTruthCell { row, col, value })
            .collect()
    }

    #[test]
    fn quantiles_interpolate_between_order_statistics() {
        let sorted: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_abs_diff_eq!(linear_quantile(&sorted, 0.025), 3.475, epsilon = 1e-12);
        assert_abs_diff_eq!(linear_quantile(&sorted, 0.975), 97.525, epsilon = 1e-12);
        assert_eq!(linear_quantile(&sorted, 0.0), 1.0);
        assert_eq!(linear_quantile(&sorted, 1.0), 100.0);
        assert_abs_diff_eq!(linear_quantile(&sorted, 0.5), 50.5, epsilon = 1e-12);
    }

    #[test]
    fn interval_on_one_to_hundred_matches_hand_interpolation() {
        let cells = [(0usize, 1usize)];
        let draws: Vec<Vec<f64>> = (1..=100).map(|i| vec![i as f64]).collect();
        let set = set_from_draws(1, &cells, &draws);
        let truth = cells_to_truth(&cells, &[50.0]);
        let ivs = confidence_intervals(&set, &truth, 0.95).unwrap();
        assert_abs_diff_eq!(ivs[0].0, 3.475, epsilon = 1e-12);
        assert_abs_diff_eq!(ivs[0].1, 97.525, epsilon = 1e-12);
    }

    #[test]
    fn identical_draws_collapse_the_interval() {
        let cells = [(0usize, 0usize)];
        let set = set_from_draws(1, &cells, &vec![vec![2.5]; 30]);
        let truth = cells_to_truth(&cells, &[2.5]);
        let ivs = confidence_intervals(&set, &truth, 0.9).unwrap();
        assert_eq!(ivs[0], (2.5, 2.5));
        // Truth exactly at the degenerate endpoints counts as covered.
        assert_eq!(empirical_coverage(&set, &truth, 0.9).unwrap(), 1.0);
    }

    #[test]
    fn intervals_nest_as_the_level_grows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cells = [(0usize, 0usize), (1, 1), (2, 0)];
        let draws: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let set = set_from_draws(3, &cells, &draws);
        let truth = cells_to_truth(&cells, &[0.0, 0.0, 0.0]);
        let narrow = confidence_intervals(&set, &truth, 0.9).unwrap();
        let wide = confidence_intervals(&set, &truth, 0.98).unwrap();
        for (n, w) in narrow.iter().zip(&wide) {
            assert!(w.0 <= n.0 && n.1 <= w.1, "wide {w:?} should contain {n:?}");
        }
    }

    #[test]
    fn mae_is_zero_only_when_estimates_match_truth() {
        let cells = [(0usize, 0usize), (1, 1)];
        let set = set_from_draws(2, &cells, &vec![vec![1.0, -2.0]; 5]);
        let truth = cells_to_truth(&cells, &[1.0, -2.0]);
        assert_eq!(mae(&set, &truth).unwrap(), 0.0);
        let off = cells_to_truth(&cells, &[1.0, -1.5]);
        assert!(mae(&set, &off).unwrap() > 0.0);
    }

    #[test]
    fn mae_averages_within_rows_before_across_rows() {
        // Row 0 has two cells with errors 0.1 and 0.3, row 1 one cell with
        // error 0.6: per-row means are 0.2 and 0.6, so the MAE is 0.4 —
        // not the pooled-cell mean 1/3.
        let cells = [(0usize, 0usize), (0, 1), (1, 0)];
        let set = set_from_draws(2, &cells, &[vec![0.1, 0.3, 0.6]]);
        let truth = cells_to_truth(&cells, &[0.0, 0.0, 0.0]);
        let got = mae(&set, &truth).unwrap();
        assert_abs_diff_eq!(got, 0.4, epsilon = 1e-15);
        assert!((got - 1.0 / 3.0).abs() > 0.05);
    }

    #[test]
    fn mae_with_one_row_two_cells_is_their_mean_error() {
        let cells = [(0usize, 0usize), (0, 1)];
        let set = set_from_draws(1, &cells, &[vec![0.1, 0.3]]);
        let truth = cells_to_truth(&cells, &[0.0, 0.0]);
        assert_abs_diff_eq!(mae(&set, &truth).unwrap(), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn truth_at_unmasked_cells_is_rejected() {
        let cells = [(0usize, 0usize)];
        let set = set_from_draws(2, &cells, &[vec![1.0]]);
        let bad = vec![GroundTruthCell {
            row: 1,
            col: 1,
            value: 0.0,
        }];
        let msg = mae(&set, &bad).unwrap_err().to_string();
        assert!(msg.contains("not masked"), "{msg}");
        assert!(mae(&set, &[]).is_err());
    }

    #[test]
    fn too_few_draws_is_a_structured_error() {
        let cells = [(0usize, 0usize)];
        let set = set_from_draws(1, &cells, &vec![vec![0.0]; 10]);
        let truth = cells_to_truth(&cells, &[0.0]);
        match confidence_intervals(&set, &truth, 0.95).unwrap_err() {
            Error::TooFewDraws {
                level,
                required,
                available,
            } => {
                assert_eq!(level, 0.95);
                assert_eq!(required, 20);
                assert_eq!(available, 10);
            }
            other => panic!("expected TooFewDraws, got {other:?}"),
        }
        // 20 draws resolve a 95% interval exactly at the rule's boundary.
        let set = set_from_draws(1, &cells, &vec![vec![0.0]; 20]);
        confidence_intervals(&set, &truth, 0.95).unwrap();
    }

    #[test]
    fn coverage_is_monotone_in_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cells: Vec<(usize, usize)> = (0..40).map(|i| (i, 0)).collect();
        let draws: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..40).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let set = set_from_draws(40, &cells, &draws);
        let values: Vec<f64> = (0..40).map(|_| rng.sample(StandardNormal)).collect();
        let truth = cells_to_truth(&cells, &values);
        let mut last = 0.0;
        for level in [0.5, 0.8, 0.9, 0.95, 0.99] {
            let c = empirical_coverage(&set, &truth, level).unwrap();
            assert!(c >= last, "coverage dropped from {last} to {c} at {level}");
            last = c;
        }
    }

    #[test]
    fn percentile_map_echoes_keys_and_respects_extremes() {
        let cells = [(0usize, 0usize)];
        let draws: Vec<Vec<f64>> = (1..=100).map(|i| vec![i as f64]).collect();
        let set = set_from_draws(1, &cells, &draws);
        // Truth above the maximum draw is never below any quantile.
        let high = cells_to_truth(&cells, &[101.0]);
        let cov = percentile_coverage(&set, &high, &DEFAULT_PERCENTILES).unwrap();
        let keys: Vec<f64> = cov.iter().map(|&(p, _)| p).collect();
        assert_eq!(keys, DEFAULT_PERCENTILES.to_vec());
        assert!(cov.iter().all(|&(_, f)| f == 0.0));
        // Truth exactly at the maximum draw is covered by the top quantile
        // (inclusive convention).
        let at_max = cells_to_truth(&cells, &[100.0]);
        let cov = percentile_coverage(&set, &at_max, &[0.99]).unwrap();
        assert_eq!(cov[0].1, 0.0); // 0.99-quantile of 1..100 is 98.02 < 100
        let below = cells_to_truth(&cells, &[boundary_quantile(&set)]);
        let cov = percentile_coverage(&set, &below, &[0.99]).unwrap();
        assert_eq!(cov[0].1, 1.0);
    }

    fn boundary_quantile(set: &ImputationSet) -> f64 {
        let draws = sorted_cell_draws(set, 0, 0);
        linear_quantile(&draws, 0.99)
    }

    #[test]
    fn exact_sampler_coverage_sits_in_the_binomial_band() {
        // Truth and draws from the same N(0,1): nominal coverage must hold
        // up to binomial noise. 2000 cells, M=100 draws.
        let n_cells = 2000;
        let m = 100;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cells: Vec<(usize, usize)> = (0..n_cells).map(|i| (i, i % 2)).collect();
        let draws: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n_cells).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let set = set_from_draws(n_cells, &cells, &draws);
        let values: Vec<f64> = (0..n_cells).map(|_| rng.sample(StandardNormal)).collect();
        let truth = cells_to_truth(&cells, &values);

        for level in [0.8, 0.95] {
            let cov = empirical_coverage(&set, &truth, level).unwrap();
            let sigma = (level * (1.0 - level) / n_cells as f64).sqrt();
            assert!(
                (cov - level).abs() < 3.0 * sigma + 0.01,
                "level {level}: coverage {cov}"
            );
        }
        for (p, f) in percentile_coverage(&set, &truth, &[0.25, 0.5, 0.75]).unwrap() {
            let sigma = (p * (1.0 - p) / n_cells as f64).sqrt();
            assert!((f - p).abs() < 3.0 * sigma + 0.01, "p {p}: fraction {f}");
        }
    }

    #[test]
    fn report_collects_all_metrics_and_serializes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cells: Vec<(usize, usize)> = (0..10).map(|i| (i, 1)).collect();
        let draws: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..10).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let set = set_from_draws(10, &cells, &draws);
        let values: Vec<f64> = (0..10).map(|_| rng.sample(StandardNormal)).collect();
        let truth = cells_to_truth(&cells, &values);
        let report = evaluate(
            &set,
            &truth,
            &DEFAULT_COVERAGE_LEVELS,
            &DEFAULT_PERCENTILES,
        )
        .unwrap();
        assert_eq!(report.n_cells, 10);
        assert!(report.mae >= 0.0);
        assert!(report
            .coverage
            .iter()
            .chain(&report.percentile_coverage)
            .all(|&(_, f)| (0.0..=1.0).contains(&f)));
        let json = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn trace_csv_lists_every_iteration_of_every_row() {
        let traces = vec![
            RowTrace {
                row: 0,
                row_id: "row_0".into(),
                values: vec![-1.5, -1.2, -1.0],
            },
            RowTrace {
                row: 2,
                row_id: "row_2".into(),
                values: vec![-4.0, -3.5, -3.0],
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_trace_csv(&traces, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert_eq!(lines[0], "row_id,iteration,log_joint");
        assert_eq!(lines[1], "row_0,1,-1.5");
        assert_eq!(lines[4], "row_2,1,-4");
        // Iterations stay monotone within each row block.
        assert_eq!(lines[5], "row_2,2,-3.5");
    }

    #[test]
    fn scatter_rows_are_sorted_by_truth() {
        let cells = [(0usize, 0usize), (1, 0), (2, 0)];
        let draws: Vec<Vec<f64>> = (0..25)
            .map(|m| vec![m as f64 * 0.01, 1.0 + m as f64 * 0.01, -1.0])
            .collect();
        let set = set_from_draws(3, &cells, &draws);
        let truth = cells_to_truth(&cells, &[0.5, -0.5, 0.1]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scatter.csv");
        write_scatter_csv(&set, &truth, 0.9, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let truths: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
            .collect();
        assert_eq!(truths, vec![-0.5, 0.1, 0.5]);
    }
}
