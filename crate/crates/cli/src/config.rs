//! One JSON document drives every stage. All randomness flows from the
//! single `seed`; nested sections deliberately have no seed fields of their
//! own (an attempt to sneak one in is rejected as an unknown key), and each
//! stage derives an independent stream via a stable label.

use std::path::{Path, PathBuf};

use betaimpute::betavae::{ModelSpec, TrainConfig};
use betaimpute::crossval::CvPlan;
use betaimpute::data_io::{read_json, sha256_bytes, MaskSpec};
use betaimpute::samplers::{Method, SamplerConfig};
use betaimpute::seed::derive_seed;
use betaimpute::{Error, Result};
use serde::{Deserialize, Serialize};

/// Top-level run description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Input CSV: feature columns plus, optionally, one label column.
    pub input: PathBuf,
    /// Output directory; each stage writes its own subdirectory.
    pub out: PathBuf,
    /// The single global seed.
    #[serde(default)]
    pub seed: u64,
    /// Training KL weight used when no `cv` section selects one.
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub mask: MaskSettings,
    pub model: ModelSettings,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub sampler: SamplerSettings,
    #[serde(default)]
    pub cv: Option<CvSettings>,
    #[serde(default)]
    pub evaluate: EvalSettings,
    #[serde(default)]
    pub downstream: Option<DownstreamSettings>,
}

fn default_beta() -> f64 {
    1.0
}

/// Fractions for the held-out-cells stage.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSettings {
    pub row_fraction: f64,
    pub cell_fraction: f64,
}

impl MaskSettings {
    pub fn to_spec(self, seed: u64) -> MaskSpec {
        MaskSpec {
            row_fraction: self.row_fraction,
            cell_fraction: self.cell_fraction,
            seed,
        }
    }
}

/// Network architecture.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSettings {
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
}

impl ModelSettings {
    pub fn to_spec(&self) -> ModelSpec {
        ModelSpec {
            hidden: self.hidden.clone(),
            latent_dim: self.latent_dim,
        }
    }
}

/// Optimizer settings; β and the seed are supplied elsewhere.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss_on_masked: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let base = TrainConfig::default();
        TrainSettings {
            epochs: base.epochs,
            batch_size: base.batch_size,
            learning_rate: base.learning_rate,
            loss_on_masked: base.loss_on_masked,
        }
    }
}

impl TrainSettings {
    pub fn to_config(self, beta: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            beta,
            loss_on_masked: self.loss_on_masked,
        }
    }
}

/// Imputation sampler settings. Counts left out fall back to the method's
/// defaults; `beta` here overrides the trained model's β at sampling time.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSettings {
    pub method: Method,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub m_draws: Option<usize>,
    pub beta: Option<f64>,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        SamplerSettings {
            method: Method::Sir,
            iterations: None,
            burn_in: None,
            m_draws: None,
            beta: None,
        }
    }
}

impl SamplerSettings {
    pub fn to_config(self, seed: u64) -> SamplerConfig {
        let base = SamplerConfig::defaults_for(self.method);
        SamplerConfig {
            method: self.method,
            iterations: self.iterations.unwrap_or(base.iterations),
            burn_in: self.burn_in.unwrap_or(base.burn_in),
            m_draws: self.m_draws.unwrap_or(base.m_draws),
            seed,
            beta: self.beta,
        }
    }
}

/// Hyperparameter search settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvSettings {
    pub k: usize,
    /// Extra cells hidden per copy for scoring, as MCAR fractions.
    pub row_fraction: f64,
    pub cell_fraction: f64,
    pub beta_grid: Vec<f64>,
    pub epoch_grid: Vec<usize>,
    #[serde(default = "default_coverage_target")]
    pub coverage_target: f64,
    #[serde(default = "default_coverage_band")]
    pub coverage_band: f64,
}

fn default_coverage_target() -> f64 {
    0.95
}

fn default_coverage_band() -> f64 {
    0.02
}

impl CvSettings {
    pub fn to_plan(&self, seed: u64) -> CvPlan {
        CvPlan {
            k: self.k,
            extra_missing: MaskSpec {
                row_fraction: self.row_fraction,
                cell_fraction: self.cell_fraction,
                seed: 0,
            },
            beta_grid: self.beta_grid.clone(),
            epoch_grid: self.epoch_grid.clone(),
            coverage_target: self.coverage_target,
            coverage_band: self.coverage_band,
            seed,
        }
    }
}

/// Scoring settings; `None` means the library defaults, trimmed to what the
/// number of draws can resolve.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub levels: Option<Vec<f64>>,
    pub percentiles: Option<Vec<f64>>,
}

/// Penalized-regression study settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownstreamSettings {
    /// Column of the input CSV holding the binary outcome.
    pub label_column: String,
    /// L1 penalty, fixed across draws so the fits stay comparable.
    pub lambda: f64,
    #[serde(default = "default_p_incl_threshold")]
    pub p_incl_threshold: f64,
    #[serde(default = "default_ci_level")]
    pub ci_level: f64,
    #[serde(default = "default_lasso_tol")]
    pub tol: f64,
    #[serde(default = "default_lasso_max_iters")]
    pub max_iters: usize,
    /// Ground-truth causal columns; when present the selection report
    /// includes a false-discovery rate.
    #[serde(default)]
    pub truth_genes: Option<Vec<String>>,
}

fn default_p_incl_threshold() -> f64 {
    0.5
}

fn default_ci_level() -> f64 {
    0.95
}

fn default_lasso_tol() -> f64 {
    1e-8
}

fn default_lasso_max_iters() -> usize {
    10_000
}

impl RunConfig {
    /// Read and parse a config file. Validation is separate so flag
    /// overrides can be applied in between.
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Check every section and collect every violation into one error.
    pub fn validate(&self) -> Result<()> {
        fn absorb(problems: &mut Vec<String>, section: &str, outcome: Result<()>) {
            if let Err(e) = outcome {
                for line in e.to_string().lines() {
                    problems.push(format!("{section}: {line}"));
                }
            }
        }

        let mut problems = Vec::new();
        if self.input.as_os_str().is_empty() {
            problems.push("input: path must not be empty".to_string());
        }
        if self.out.as_os_str().is_empty() {
            problems.push("out: path must not be empty".to_string());
        }
        if !self.beta.is_finite() || self.beta <= 0.0 {
            problems.push(format!(
                "beta: must be positive and finite, got {}",
                self.beta
            ));
        }
        absorb(&mut problems, "mask", self.mask.to_spec(0).validate());
        absorb(&mut problems, "model", self.model.to_spec().validate());
        absorb(&mut problems, "train", self.train.to_config(1.0, 0).validate());
        absorb(&mut problems, "sampler", self.sampler.to_config(0).validate());
        if let Some(cv) = &self.cv {
            absorb(&mut problems, "cv", cv.to_plan(0).validate());
        }
        for (name, list) in [
            ("evaluate.levels", &self.evaluate.levels),
            ("evaluate.percentiles", &self.evaluate.percentiles),
        ] {
            if let Some(values) = list {
                for &v in values {
                    if !(v > 0.0 && v < 1.0) {
                        problems.push(format!("{name}: {v} is not inside (0, 1)"));
                    }
                }
            }
        }
        if let Some(d) = &self.downstream {
            if d.label_column.is_empty() {
                problems.push("downstream: label_column must not be empty".to_string());
            }
            if !d.lambda.is_finite() || d.lambda <= 0.0 {
                problems.push(format!(
                    "downstream: lambda must be positive and finite, got {}",
                    d.lambda
                ));
            }
            if !(0.0..=1.0).contains(&d.p_incl_threshold) {
                problems.push(format!(
                    "downstream: p_incl_threshold must be in [0, 1], got {}",
                    d.p_incl_threshold
                ));
            }
            if !(d.ci_level > 0.0 && d.ci_level < 1.0) {
                problems.push(format!(
                    "downstream: ci_level must be inside (0, 1), got {}",
                    d.ci_level
                ));
            }
            if !d.tol.is_finite() || d.tol <= 0.0 {
                problems.push(format!(
                    "downstream: tol must be positive and finite, got {}",
                    d.tol
                ));
            }
            if d.max_iters == 0 {
                problems.push("downstream: max_iters must be positive".to_string());
            }
        }

        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("\n")))
        }
    }

    /// Stable per-stage seed stream.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, &format!("stage/{stage}"))
    }

    /// Hash of the effective configuration (after flag overrides), embedded
    /// in every stage record for provenance. The output directory is not
    /// part of the hash: it decides where artifacts land, never what gets
    /// computed, so the same experiment keeps one identity wherever it runs.
    pub fn hash(&self) -> String {
        let mut identity = self.clone();
        identity.out = PathBuf::new();
        let bytes = serde_json::to_vec(&identity).expect("config serializes");
        sha256_bytes(&bytes)
    }
}
