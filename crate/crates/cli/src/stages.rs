//! The pipeline stages. Each reads only documented artifacts from earlier
//! stages, writes its own subdirectory of the output root, and finishes by
//! recording a `stage.json` with the config hash and a checksum for every
//! file it produced — so any artifact can be traced to the exact
//! configuration that made it.

use std::fs;
use std::path::{Path, PathBuf};

use betaimpute::betavae::{train_with_snapshots, BetaVae};
use betaimpute::crossval::{retrain_selected, run_cv, write_cv_csv, write_cv_json};
use betaimpute::data_io::{
    load_csv_with_labels, load_dataset, load_ground_truth, load_imputations, load_labels,
    mask_mcar, save_dataset, save_ground_truth, save_imputations, save_labels, sha256_file,
    write_json, DataMatrix,
};
use betaimpute::downstream::{
    fdr, fit_all, select_genes, summarize, write_coefficients_csv, write_selections_json,
    write_summary_json, SelectionCriterion, SelectionReport,
};
use betaimpute::evaluation::{
    evaluate, required_draws_for_level, required_draws_for_percentile, write_coverage_csv,
    write_report_json, write_scatter_csv, write_trace_csv, DEFAULT_COVERAGE_LEVELS,
    DEFAULT_PERCENTILES,
};
use betaimpute::nn::NetMeta;
use betaimpute::samplers::multiple_impute;
use betaimpute::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// Where each stage keeps its artifacts, relative to the output root.
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout {
            root: root.to_path_buf(),
        }
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }

    pub fn masked_csv(&self) -> PathBuf {
        self.stage_dir("mask").join("masked.csv")
    }

    pub fn masked_meta(&self) -> PathBuf {
        self.stage_dir("mask").join("masked.meta.json")
    }

    pub fn truth_csv(&self) -> PathBuf {
        self.stage_dir("mask").join("truth.csv")
    }

    pub fn labels_csv(&self) -> PathBuf {
        self.stage_dir("mask").join("labels.csv")
    }

    pub fn train_model(&self) -> PathBuf {
        self.stage_dir("train").join("model.ckpt")
    }

    pub fn train_trace(&self) -> PathBuf {
        self.stage_dir("train").join("trace.csv")
    }

    pub fn cv_model(&self) -> PathBuf {
        self.stage_dir("cv").join("model.ckpt")
    }

    pub fn cv_table(&self) -> PathBuf {
        self.stage_dir("cv").join("table.csv")
    }

    pub fn cv_result(&self) -> PathBuf {
        self.stage_dir("cv").join("result.json")
    }

    pub fn impute_manifest(&self) -> PathBuf {
        self.stage_dir("impute").join("manifest.json")
    }

    pub fn impute_trace(&self) -> PathBuf {
        self.stage_dir("impute").join("trace.csv")
    }

    pub fn report_json(&self) -> PathBuf {
        self.stage_dir("evaluate").join("report.json")
    }

    pub fn coverage_csv(&self) -> PathBuf {
        self.stage_dir("evaluate").join("coverage.csv")
    }

    pub fn scatter_csv(&self) -> PathBuf {
        self.stage_dir("evaluate").join("scatter.csv")
    }

    pub fn coefficients_csv(&self) -> PathBuf {
        self.stage_dir("downstream").join("coefficients.csv")
    }

    pub fn summary_json(&self) -> PathBuf {
        self.stage_dir("downstream").join("summary.json")
    }

    pub fn selections_json(&self) -> PathBuf {
        self.stage_dir("downstream").join("selections.json")
    }
}

/// Provenance record: which configuration produced which bytes.
#[derive(Debug, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub config_hash: String,
    pub artifacts: Vec<ArtifactRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub name: String,
    pub sha256: String,
}

/// Checksum the named files and write the stage record next to them.
fn record_stage(cfg: &RunConfig, stage: &str, files: &[PathBuf]) -> Result<()> {
    let dir = Layout::new(&cfg.out).stage_dir(stage);
    let mut artifacts = Vec::with_capacity(files.len());
    for path in files {
        artifacts.push(ArtifactRecord {
            name: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            sha256: sha256_file(path)?,
        });
    }
    artifacts.sort_by(|a, b| a.name.cmp(&b.name));
    let record = StageRecord {
        stage: stage.to_string(),
        config_hash: cfg.hash(),
        artifacts,
    };
    write_json(&dir.join("stage.json"), &record)?;
    println!(
        "stage {stage}: wrote {} ({} artifacts)",
        dir.display(),
        record.artifacts.len()
    );
    Ok(())
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Load the masked dataset produced by the mask stage, or say who should
/// have produced it.
fn load_masked(cfg: &RunConfig) -> Result<DataMatrix> {
    let layout = Layout::new(&cfg.out);
    if !layout.masked_csv().exists() || !layout.masked_meta().exists() {
        return Err(Error::MissingArtifact {
            what: "masked dataset".into(),
            stage: "mask".into(),
        });
    }
    load_dataset(&layout.masked_csv(), &layout.masked_meta())
}

/// Hide cells from the input and persist the masked data, the held-out
/// truth, and (when a label column is configured) the labels.
pub fn cmd_mask(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    ensure_dir(&layout.stage_dir("mask"))?;

    let label_column = cfg.downstream.as_ref().map(|d| d.label_column.as_str());
    let (data, labels) = load_csv_with_labels(&cfg.input, "", label_column)?;
    let (masked, truth) = mask_mcar(&data, &cfg.mask.to_spec(cfg.stage_seed("mask")))?;

    save_dataset(&masked, &layout.masked_csv(), &layout.masked_meta())?;
    save_ground_truth(&truth, &masked, &layout.truth_csv())?;
    let mut files = vec![
        layout.masked_csv(),
        layout.masked_meta(),
        layout.truth_csv(),
    ];
    if let Some(labels) = labels {
        save_labels(&masked.row_ids, &labels, &layout.labels_csv())?;
        files.push(layout.labels_csv());
    }
    record_stage(cfg, "mask", &files)
}

/// Train one model at the configured β on the masked data.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    ensure_dir(&layout.stage_dir("train"))?;
    let data = load_masked(cfg)?;

    let init = cfg
        .model
        .to_spec()
        .build(data.n_cols(), cfg.beta, cfg.stage_seed("init"))?;
    let tcfg = cfg.train.to_config(cfg.beta, cfg.stage_seed("train"));
    let run = train_with_snapshots(&init, &data, &tcfg, &[])?;

    let meta = NetMeta {
        seed: tcfg.seed,
        training_step: run.steps,
    };
    run.model.save(&meta, &layout.train_model())?;
    write_loss_trace(&run.trace, &layout.train_trace())?;
    record_stage(cfg, "train", &[layout.train_model(), layout.train_trace()])
}

/// Write a per-epoch loss trace as `epoch,loss` records.
fn write_loss_trace(trace: &[f64], path: &Path) -> Result<()> {
    let mut text = String::from("epoch,loss\n");
    for (i, loss) in trace.iter().enumerate() {
        text.push_str(&format!("{},{loss}\n", i + 1));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Search the (β, epochs) grid on extra-masked copies, retrain the winner
/// on everything, and persist both the scores and the selected model.
pub fn cmd_cv(cfg: &RunConfig) -> Result<()> {
    let settings = cfg.cv.as_ref().ok_or_else(|| {
        Error::InvalidConfig("cv: section missing but the cv stage was requested".into())
    })?;
    let layout = Layout::new(&cfg.out);
    ensure_dir(&layout.stage_dir("cv"))?;
    let data = load_masked(cfg)?;

    let plan = settings.to_plan(cfg.stage_seed("cv"));
    let spec = cfg.model.to_spec();
    // β and epochs come from the grid; the retrain seed is this template's.
    let train_template = cfg.train.to_config(1.0, cfg.stage_seed("retrain"));
    let sampler_template = cfg.sampler.to_config(0);

    let result = run_cv(&data, &plan, &spec, &train_template, &sampler_template)?;
    let model = retrain_selected(&data, &result, &spec, &train_template)?;

    let batches_per_epoch = data.n_rows().div_ceil(train_template.batch_size) as u64;
    let meta = NetMeta {
        seed: train_template.seed,
        training_step: result.selected_epochs as u64 * batches_per_epoch,
    };
    model.save(&meta, &layout.cv_model())?;
    write_cv_csv(&result, &layout.cv_table())?;
    write_cv_json(&result, &layout.cv_result())?;
    record_stage(
        cfg,
        "cv",
        &[layout.cv_model(), layout.cv_table(), layout.cv_result()],
    )
}

/// Find the model to impute with: the cross-validated one when present,
/// otherwise the plainly trained one.
fn load_model(cfg: &RunConfig) -> Result<BetaVae> {
    let layout = Layout::new(&cfg.out);
    let path = if layout.cv_model().exists() {
        layout.cv_model()
    } else if layout.train_model().exists() {
        layout.train_model()
    } else {
        return Err(Error::MissingArtifact {
            what: "model checkpoint".into(),
            stage: "train or cv".into(),
        });
    };
    let (model, _) = BetaVae::load(&path)?;
    Ok(model)
}

/// Draw M completions of the masked data and persist them with checksums.
pub fn cmd_impute(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    let dir = layout.stage_dir("impute");
    ensure_dir(&dir)?;
    let data = load_masked(cfg)?;
    let model = load_model(cfg)?;

    let scfg = cfg.sampler.to_config(cfg.stage_seed("impute"));
    let set = multiple_impute(&model, &data, &scfg)?;

    let manifest = save_imputations(&set, &dir, true)?;
    write_trace_csv(&set.traces, &layout.impute_trace())?;

    let mut files = vec![manifest.clone(), layout.impute_trace()];
    let listed: betaimpute::data_io::Manifest = betaimpute::data_io::read_json(&manifest)?;
    files.extend(listed.files.iter().map(|f| dir.join(&f.path)));
    record_stage(cfg, "impute", &files)
}

/// Score the imputations against the held-out truth.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    ensure_dir(&layout.stage_dir("evaluate"))?;
    let data = load_masked(cfg)?;
    if !layout.truth_csv().exists() {
        return Err(Error::MissingArtifact {
            what: "held-out truth".into(),
            stage: "mask".into(),
        });
    }
    if !layout.impute_manifest().exists() {
        return Err(Error::MissingArtifact {
            what: "imputation set".into(),
            stage: "impute".into(),
        });
    }
    let truth = load_ground_truth(&layout.truth_csv())?;
    let set = load_imputations(&layout.impute_manifest(), &data)?;
    let m = set.n_draws();

    // Explicit levels pass through (and may error as too fine for M);
    // defaults are trimmed to what M can resolve.
    let levels: Vec<f64> = match &cfg.evaluate.levels {
        Some(explicit) => explicit.clone(),
        None => DEFAULT_COVERAGE_LEVELS
            .iter()
            .copied()
            .filter(|&l| required_draws_for_level(l) <= m)
            .collect(),
    };
    let percentiles: Vec<f64> = match &cfg.evaluate.percentiles {
        Some(explicit) => explicit.clone(),
        None => DEFAULT_PERCENTILES
            .iter()
            .copied()
            .filter(|&p| required_draws_for_percentile(p) <= m)
            .collect(),
    };

    let report = evaluate(&set, &truth, &levels, &percentiles)?;
    write_report_json(&report, &layout.report_json())?;
    write_coverage_csv(&report, &layout.coverage_csv())?;
    let mut files = vec![layout.report_json(), layout.coverage_csv()];
    if levels.contains(&0.95) {
        write_scatter_csv(&set, &truth, 0.95, &layout.scatter_csv())?;
        files.push(layout.scatter_csv());
    }
    record_stage(cfg, "evaluate", &files)
}

/// Fit the penalized regression on every completion, pool, select, and
/// score against the configured ground truth.
pub fn cmd_downstream(cfg: &RunConfig) -> Result<()> {
    let settings = cfg.downstream.as_ref().ok_or_else(|| {
        Error::InvalidConfig(
            "downstream: section missing but the downstream stage was requested".into(),
        )
    })?;
    let layout = Layout::new(&cfg.out);
    ensure_dir(&layout.stage_dir("downstream"))?;
    let data = load_masked(cfg)?;
    if !layout.labels_csv().exists() {
        return Err(Error::MissingArtifact {
            what: format!("labels ({})", settings.label_column),
            stage: "mask".into(),
        });
    }
    if !layout.impute_manifest().exists() {
        return Err(Error::MissingArtifact {
            what: "imputation set".into(),
            stage: "impute".into(),
        });
    }
    let labels = load_labels(&layout.labels_csv())?;
    let set = load_imputations(&layout.impute_manifest(), &data)?;

    let fits = fit_all(&set, &labels, settings.lambda, settings.tol, settings.max_iters)?;
    let summary = summarize(&fits, &set.column_names, settings.ci_level)?;
    write_coefficients_csv(&fits, &set.column_names, &layout.coefficients_csv())?;
    write_summary_json(&summary, &layout.summary_json())?;

    let reports: Vec<SelectionReport> = [
        (
            "nonzero_ci".to_string(),
            select_genes(&summary, SelectionCriterion::NonzeroCi),
        ),
        (
            format!("p_incl>{}", settings.p_incl_threshold),
            select_genes(
                &summary,
                SelectionCriterion::PInclThreshold(settings.p_incl_threshold),
            ),
        ),
    ]
    .into_iter()
    .map(|(criterion, genes)| SelectionReport {
        criterion,
        n_selected: genes.len(),
        fdr: settings
            .truth_genes
            .as_ref()
            .map(|truth| fdr(&genes, truth)),
        genes,
    })
    .collect();
    write_selections_json(&reports, &layout.selections_json())?;

    record_stage(
        cfg,
        "downstream",
        &[
            layout.coefficients_csv(),
            layout.summary_json(),
            layout.selections_json(),
        ],
    )
}

/// Run every configured stage in order: mask, then cv (when configured) or
/// train, then impute, evaluate, and downstream (when configured).
pub fn cmd_pipeline(cfg: &RunConfig) -> Result<()> {
    cmd_mask(cfg)?;
    if cfg.cv.is_some() {
        cmd_cv(cfg)?;
    } else {
        cmd_train(cfg)?;
    }
    cmd_impute(cfg)?;
    cmd_evaluate(cfg)?;
    if cfg.downstream.is_some() {
        cmd_downstream(cfg)?;
    }
    Ok(())
}
