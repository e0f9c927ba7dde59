//! Hyperparameter selection by masked-cell cross-validation.
//!
//! The training data already has genuine missingness, so held-out truth has
//! to be manufactured: make `k` copies of the data, hide a small extra
//! fraction of *observed* cells in each (MCAR, copy-specific seed), train on
//! the copies across a (β, epochs) grid, and score each combination by
//! imputing the extra-hidden cells. Epochs are realized as snapshot
//! checkpoints of a single training run per (copy, β), so a grid of E epoch
//! values costs one training run, not E.
//!
//! Selection: among combinations whose coverage lies within a band around
//! the target (default 0.95 ± 0.02), take the lowest MAE. If nothing lands
//! in the band, fall back to the nearest coverage, breaking ties by lower
//! MAE, then lower β, then fewer epochs. The final model is then retrained
//! on all the data with the winning combination.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::betavae::{train_with_snapshots, BetaVae, ModelSpec, TrainConfig};
use crate::data_io::{mask_mcar, DataMatrix, GroundTruthCell, MaskSpec};
use crate::error::{Error, Result};
use crate::evaluation::{empirical_coverage, mae};
use crate::samplers::{multiple_impute, SamplerConfig};
use crate::seed::derive_seed;

/// Cross-validation layout: copies, extra missingness, and the search grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    /// Number of data copies, each with its own extra-hidden cells.
    pub k: usize,
    /// Extra MCAR missingness per copy. The seed field is ignored; each
    /// copy derives its own from [`CvPlan::seed`].
    pub extra_missing: MaskSpec,
    pub beta_grid: Vec<f64>,
    /// Epoch counts to score, strictly ascending.
    pub epoch_grid: Vec<usize>,
    /// Nominal interval level coverage is compared against.
    pub coverage_target: f64,
    /// Half-width of the acceptable coverage window.
    pub coverage_band: f64,
    pub seed: u64,
}

impl CvPlan {
    /// A plan hiding `total_budget` of each row's observed cells split
    /// evenly across the `k` copies, so more copies mean less distortion
    /// per trained model while the pooled scoring budget stays fixed.
    pub fn with_total_budget(
        k: usize,
        row_fraction: f64,
        total_budget: f64,
        beta_grid: Vec<f64>,
        epoch_grid: Vec<usize>,
        seed: u64,
    ) -> Self {
        CvPlan {
            k,
            extra_missing: MaskSpec {
                row_fraction,
                cell_fraction: total_budget / k.max(1) as f64,
                seed: 0,
            },
            beta_grid,
            epoch_grid,
            coverage_target: 0.95,
            coverage_band: 0.02,
            seed,
        }
    }

    /// Validate the grid and fractions; collects every violation.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.k < 2 {
            problems.push(format!("k must be at least 2, got {}", self.k));
        }
        if self.beta_grid.is_empty() {
            problems.push("beta_grid must be nonempty".to_string());
        }
        for &beta in &self.beta_grid {
            if !beta.is_finite() || beta <= 0.0 {
                problems.push(format!("beta_grid entries must be positive, got {beta}"));
            }
        }
        if self.epoch_grid.is_empty() {
            problems.push("epoch_grid must be nonempty".to_string());
        }
        if self.epoch_grid.first().is_some_and(|&e| e == 0) {
            problems.push("epoch_grid entries must be positive".to_string());
        }
        if !self.epoch_grid.windows(2).all(|w| w[0] < w[1]) {
            problems.push(format!(
                "epoch_grid must be strictly ascending, got {:?}",
                self.epoch_grid
            ));
        }
        if !(0.0 < self.coverage_target && self.coverage_target < 1.0) {
            problems.push(format!(
                "coverage_target must lie in (0, 1), got {}",
                self.coverage_target
            ));
        }
        if !self.coverage_band.is_finite() || self.coverage_band < 0.0 {
            problems.push(format!(
                "coverage_band must be non-negative, got {}",
                self.coverage_band
            ));
        }
        if let Err(e) = self.extra_missing.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("\n")))
        }
    }
}

/// One scored grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub beta: f64,
    pub epochs: usize,
    pub copy: usize,
    pub mae: f64,
    pub coverage: f64,
}

/// Per-(β, epochs) means over copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCombo {
    pub beta: f64,
    pub epochs: usize,
    pub mae: f64,
    pub coverage: f64,
}

/// Full cross-validation output: the raw table, combo means, and the winner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// All (β, epochs, copy) scores, ordered by (β-grid index, epochs, copy).
    pub table: Vec<CvCell>,
    /// Copy-averaged scores, ordered by (β-grid index, epochs).
    pub combos: Vec<CvCombo>,
    pub selected_beta: f64,
    pub selected_epochs: usize,
}

/// Score the whole (β, epochs) grid on `k` extra-masked copies of `data`
/// and pick a winner.
///
/// `train_template` supplies everything about training except `beta` and
/// `epochs` (overridden per grid cell); `sampler_template` supplies the
/// scoring sampler, its `beta: None` inheriting each cell's training β.
/// Jobs over (copy, β) run in parallel; the table order, every RNG stream,
/// and therefore the whole result depend only on `(data, plan, templates)`.
pub fn run_cv(
    data: &DataMatrix,
    plan: &CvPlan,
    spec: &ModelSpec,
    train_template: &TrainConfig,
    sampler_template: &SamplerConfig,
) -> Result<CvResult> {
    plan.validate()?;
    spec.validate()?;

    let jobs: Vec<(usize, usize)> = (0..plan.k)
        .flat_map(|copy| (0..plan.beta_grid.len()).map(move |bi| (copy, bi)))
        .collect();

    let outcomes: Vec<Result<Vec<CvCell>>> = jobs
        .par_iter()
        .map(|&(copy, bi)| {
            run_job(data, plan, spec, train_template, sampler_template, copy, bi).map_err(|e| {
                Error::CvJob {
                    copy,
                    beta: plan.beta_grid[bi],
                    source: Box::new(e),
                }
            })
        })
        .collect();

    let mut table = Vec::with_capacity(jobs.len() * plan.epoch_grid.len());
    for outcome in outcomes {
        table.extend(outcome?);
    }
    // Jobs were spawned copy-major; the table reads clearer β-major.
    table.sort_by(|a, b| {
        let ka = (grid_index(&plan.beta_grid, a.beta), a.epochs, a.copy);
        let kb = (grid_index(&plan.beta_grid, b.beta), b.epochs, b.copy);
        ka.cmp(&kb)
    });

    let combos = combo_means(&table, plan);
    let selected = select_combo(&combos, plan.coverage_target, plan.coverage_band)?;
    Ok(CvResult {
        table,
        combos,
        selected_beta: selected.beta,
        selected_epochs: selected.epochs,
    })
}

fn grid_index(grid: &[f64], beta: f64) -> usize {
    grid.iter().position(|&b| b == beta).unwrap_or(grid.len())
}

/// Train one (copy, β) cell and score every epoch snapshot.
fn run_job(
    data: &DataMatrix,
    plan: &CvPlan,
    spec: &ModelSpec,
    train_template: &TrainConfig,
    sampler_template: &SamplerConfig,
    copy: usize,
    beta_index: usize,
) -> Result<Vec<CvCell>> {
    let beta = plan.beta_grid[beta_index];
    let copy_spec = MaskSpec {
        seed: derive_seed(plan.seed, &format!("cv/copy/{copy}")),
        ..plan.extra_missing
    };
    let (masked, truth) = mask_mcar(data, &copy_spec)?;

    let mut train_cfg = train_template.clone();
    train_cfg.beta = beta;
    train_cfg.epochs = *plan.epoch_grid.last().expect("validated nonempty");
    train_cfg.seed = derive_seed(plan.seed, &format!("cv/train/{copy}/{beta_index}"));

    let init = spec.build(
        data.n_cols(),
        beta,
        derive_seed(plan.seed, &format!("cv/init/{copy}/{beta_index}")),
    )?;
    let run = train_with_snapshots(&init, &masked, &train_cfg, &plan.epoch_grid)?;

    // Only rows holding hidden truth need imputing; per-row RNG streams are
    // row-id-keyed, so scoring a subset equals scoring within the full data.
    let mut rows: Vec<usize> = truth.iter().map(|c| c.row).collect();
    rows.sort_unstable();
    rows.dedup();
    let subset = masked.select_rows(&rows)?;
    let subset_truth: Vec<GroundTruthCell> = truth
        .iter()
        .map(|c| GroundTruthCell {
            row: rows.binary_search(&c.row).expect("row collected above"),
            col: c.col,
            value: c.value,
        })
        .collect();

    let mut sampler_cfg = *sampler_template;
    sampler_cfg.seed = derive_seed(plan.seed, &format!("cv/score/{copy}/{beta_index}"));

    let mut cells = Vec::with_capacity(run.snapshots.len());
    for snapshot in &run.snapshots {
        let set = multiple_impute(&snapshot.model, &subset, &sampler_cfg)?;
        cells.push(CvCell {
            beta,
            epochs: snapshot.epoch,
            copy,
            mae: mae(&set, &subset_truth)?,
            coverage: empirical_coverage(&set, &subset_truth, plan.coverage_target)?,
        });
    }
    Ok(cells)
}

fn combo_means(table: &[CvCell], plan: &CvPlan) -> Vec<CvCombo> {
    let mut combos = Vec::with_capacity(plan.beta_grid.len() * plan.epoch_grid.len());
    for &beta in &plan.beta_grid {
        for &epochs in &plan.epoch_grid {
            let scores: Vec<&CvCell> = table
                .iter()
                .filter(|c| c.beta == beta && c.epochs == epochs)
                .collect();
            if scores.is_empty() {
                continue;
            }
            let n = scores.len() as f64;
            combos.push(CvCombo {
                beta,
                epochs,
                mae: scores.iter().map(|c| c.mae).sum::<f64>() / n,
                coverage: scores.iter().map(|c| c.coverage).sum::<f64>() / n,
            });
        }
    }
    combos
}

/// Pick the winning combination from copy-averaged scores.
///
/// In-band combinations (|coverage − target| ≤ band) compete on MAE alone;
/// with no in-band combination, the nearest coverage wins. All ties break
/// deterministically: lower MAE, then lower β, then fewer epochs.
pub fn select_combo(combos: &[CvCombo], target: f64, band: f64) -> Result<CvCombo> {
    if combos.is_empty() {
        return Err(Error::EmptyInput(
            "no scored combinations to select from".to_string(),
        ));
    }
    let key = |c: &CvCombo| (c.mae, c.beta, c.epochs);
    let ordered = |a: &CvCombo, b: &CvCombo| {
        key(a)
            .partial_cmp(&key(b))
            .expect("scores are finite")
    };
    let in_band: Vec<&CvCombo> = combos
        .iter()
        .filter(|c| (c.coverage - target).abs() <= band)
        .collect();
    if let Some(best) = in_band.into_iter().min_by(|a, b| ordered(a, b)) {
        return Ok(best.clone());
    }
    let best = combos
        .iter()
        .min_by(|a, b| {
            let da = (a.coverage - target).abs();
            let db = (b.coverage - target).abs();
            da.partial_cmp(&db)
                .expect("scores are finite")
                .then_with(|| ordered(a, b))
        })
        .expect("nonempty checked above");
    Ok(best.clone())
}

/// Retrain on all of `data` with the selected combination. Fresh weights,
/// deterministic in `(data, result, spec, template)`.
pub fn retrain_selected(
    data: &DataMatrix,
    result: &CvResult,
    spec: &ModelSpec,
    train_template: &TrainConfig,
) -> Result<BetaVae> {
    let mut cfg = train_template.clone();
    cfg.beta = result.selected_beta;
    cfg.epochs = result.selected_epochs;
    let init = spec.build(data.n_cols(), result.selected_beta, cfg.seed)?;
    let (model, _) = crate::betavae::train(&init, data, &cfg)?;
    Ok(model)
}

/// Write the score table as CSV records `beta,epochs,copy,mae,coverage`.
pub fn write_cv_csv(result: &CvResult, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    writer
        .write_record(["beta", "epochs", "copy", "mae", "coverage"])
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    for cell in &result.table {
        writer
            .write_record([
                format!("{}", cell.beta),
                cell.epochs.to_string(),
                cell.copy.to_string(),
                format!("{}", cell.mae),
                format!("{}", cell.coverage),
            ])
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Write the full result (table, combo means, selection) as JSON.
pub fn write_cv_json(result: &CvResult, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(result).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}
