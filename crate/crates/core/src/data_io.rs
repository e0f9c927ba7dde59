//! Loading, standardizing, masking, and persisting data matrices.
//!
//! The on-disk format is a headered CSV of numbers in original units, with a
//! configurable token (empty field by default) marking missing cells. In
//! memory every matrix is standardized per column — mean zero, unit variance
//! over the *observed* cells — because the model's prior and noise scales
//! assume standardized inputs. Missing cells hold a `0.0` sentinel and are
//! tracked by a boolean mask.
//!
//! Masking for evaluation is MCAR: a seeded fraction of rows each lose a
//! seeded fraction of their observed cells, and the pre-mask values are
//! returned as ground truth (in standardized units, which is the scale all
//! evaluation metrics use).

use std::fmt::Write as _;
use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::samplers::{ImputationSet, Method, SamplerConfig};

/// Relative tolerance below which a column's standard deviation is treated as
/// zero (the column is constant up to floating-point noise).
const STD_EPSILON: f64 = 1e-12;

/// A standardized data matrix with missingness information.
///
/// `values` is N×D in standardized units; cells flagged `true` in `mask` are
/// missing and hold a `0.0` sentinel. `feature_means` and `feature_stds`
/// remember the original units so matrices can be written back out.
#[derive(Debug, Clone)]
pub struct DataMatrix {
    /// Standardized values, missing cells zeroed.
    pub values: Array2<f64>,
    /// `true` marks a missing cell.
    pub mask: Array2<bool>,
    /// Per-column mean of the observed cells, in original units.
    pub feature_means: Array1<f64>,
    /// Per-column population standard deviation of the observed cells.
    pub feature_stds: Array1<f64>,
    /// Column names from the CSV header.
    pub column_names: Vec<String>,
    /// Stable row identifiers ("row_0", "row_1", … for loaded files).
    pub row_ids: Vec<String>,
}

impl DataMatrix {
    /// Number of rows.
    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    /// Number of columns.
    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    /// Standardize a raw matrix (original units) against its own observed
    /// cells. Missing cells of `raw` are ignored and come out as `0.0`.
    ///
    /// Errors if the matrix is empty, any column has no observed cells or is
    /// constant, or all cells are missing.
    pub fn from_raw(
        raw: &Array2<f64>,
        mask: &Array2<bool>,
        column_names: Vec<String>,
        row_ids: Vec<String>,
    ) -> Result<Self> {
        if raw.nrows() == 0 || raw.ncols() == 0 {
            return Err(Error::EmptyInput("matrix has no rows or no columns".into()));
        }
        if raw.dim() != mask.dim() {
            return Err(Error::ShapeMismatch(format!(
                "values are {:?} but mask is {:?}",
                raw.dim(),
                mask.dim()
            )));
        }
        if column_names.len() != raw.ncols() || row_ids.len() != raw.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "matrix is {}x{} but {} column names and {} row ids were given",
                raw.nrows(),
                raw.ncols(),
                column_names.len(),
                row_ids.len()
            )));
        }
        if mask.iter().all(|&m| m) {
            return Err(Error::NoObservedData);
        }

        let (n, d) = raw.dim();
        let mut means = Array1::zeros(d);
        let mut stds = Array1::zeros(d);
        for j in 0..d {
            let mut sum = 0.0;
            let mut count = 0usize;
            for i in 0..n {
                if !mask[(i, j)] {
                    sum += raw[(i, j)];
                    count += 1;
                }
            }
            if count == 0 {
                return Err(Error::EmptyColumn {
                    name: column_names[j].clone(),
                });
            }
            let mean = sum / count as f64;
            let mut ss = 0.0;
            for i in 0..n {
                if !mask[(i, j)] {
                    let dev = raw[(i, j)] - mean;
                    ss += dev * dev;
                }
            }
            let std = (ss / count as f64).sqrt();
            if std <= STD_EPSILON * mean.abs().max(1.0) {
                return Err(Error::ConstantColumn {
                    name: column_names[j].clone(),
                });
            }
            means[j] = mean;
            stds[j] = std;
        }

        let mut values = Array2::zeros((n, d));
        for i in 0..n {
            for j in 0..d {
                if !mask[(i, j)] {
                    values[(i, j)] = (raw[(i, j)] - means[j]) / stds[j];
                }
            }
        }

        Ok(DataMatrix {
            values,
            mask: mask.clone(),
            feature_means: means,
            feature_stds: stds,
            column_names,
            row_ids,
        })
    }

    /// Map standardized values back to original units. Missing cells come out
    /// as the column mean (their sentinel is zero in standardized units).
    pub fn to_original_units(&self) -> Array2<f64> {
        let mut out = self.values.clone();
        for ((_, j), v) in out.indexed_iter_mut() {
            *v = *v * self.feature_stds[j] + self.feature_means[j];
        }
        out
    }

    /// A new matrix containing only the given rows (in the given order),
    /// keeping the original standardization statistics and row identifiers.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        for &i in indices {
            if i >= self.n_rows() {
                return Err(Error::ShapeMismatch(format!(
                    "row index {i} out of bounds for {} rows",
                    self.n_rows()
                )));
            }
        }
        let d = self.n_cols();
        let mut values = Array2::zeros((indices.len(), d));
        let mut mask = Array2::from_elem((indices.len(), d), false);
        let mut row_ids = Vec::with_capacity(indices.len());
        for (out_i, &i) in indices.iter().enumerate() {
            values.row_mut(out_i).assign(&self.values.row(i));
            mask.row_mut(out_i).assign(&self.mask.row(i));
            row_ids.push(self.row_ids[i].clone());
        }
        Ok(DataMatrix {
            values,
            mask,
            feature_means: self.feature_means.clone(),
            feature_stds: self.feature_stds.clone(),
            column_names: self.column_names.clone(),
            row_ids,
        })
    }

    /// Total number of missing cells.
    pub fn n_missing(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// How much MCAR missingness to inject for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    /// Fraction of rows to touch, in (0, 1]. The count is rounded up.
    pub row_fraction: f64,
    /// Fraction of columns to mask per touched row, in (0, 1]. Rounded up.
    pub cell_fraction: f64,
    /// Seed for row and cell selection.
    pub seed: u64,
}

impl MaskSpec {
    /// Validate fractions; collects every violation.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("row_fraction", self.row_fraction),
            ("cell_fraction", self.cell_fraction),
        ] {
            if !v.is_finite() || v <= 0.0 || v > 1.0 {
                problems.push(format!("{name} must be in (0, 1], got {v}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("\n")))
        }
    }
}

/// One held-out cell: its position and pre-mask standardized value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthCell {
    /// Row index into the matrix the mask was applied to.
    pub row: usize,
    /// Column index.
    pub col: usize,
    /// Standardized value before masking.
    pub value: f64,
}

/// Counts implied by a [`MaskSpec`]: `(rows touched, cells masked per row)`.
///
/// Both counts round up, so any positive fraction masks at least one row and
/// one cell. A small guard keeps floating-point noise on exact products (for
/// example `0.2 * 15`) from inflating the ceiling.
pub fn mask_counts(spec: &MaskSpec, n_rows: usize, n_cols: usize) -> (usize, usize) {
    (
        ceil_fraction(spec.row_fraction, n_rows),
        ceil_fraction(spec.cell_fraction, n_cols),
    )
}

fn ceil_fraction(fraction: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let raw = fraction * n as f64;
    let k = (raw - 1e-9).ceil();
    (k.max(0.0) as usize).min(n)
}

/// Inject MCAR missingness per `spec` and return the masked copy plus the
/// ground-truth values of every newly masked cell.
///
/// Only cells that are observed in `data` are eligible; already-missing cells
/// are never re-masked and never appear in the ground truth. Row and cell
/// selection are driven by a single ChaCha8 stream seeded from `spec.seed`,
/// with rows processed in ascending index order, so the outcome is a pure
/// function of `(data, spec)`.
pub fn mask_mcar(data: &DataMatrix, spec: &MaskSpec) -> Result<(DataMatrix, Vec<GroundTruthCell>)> {
    spec.validate()?;
    let (n_rows_sel, n_cells_sel) = mask_counts(spec, data.n_rows(), data.n_cols());

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = sample_without_replacement(&mut rng, data.n_rows(), n_rows_sel);
    rows.sort_unstable();

    let mut masked = data.clone();
    let mut truth = Vec::with_capacity(n_rows_sel * n_cells_sel);
    for &i in &rows {
        let observed: Vec<usize> = (0..data.n_cols())
            .filter(|&j| !data.mask[(i, j)])
            .collect();
        if observed.len() < n_cells_sel {
            return Err(Error::InsufficientObserved {
                row_id: data.row_ids[i].clone(),
                observed: observed.len(),
                requested: n_cells_sel,
            });
        }
        let mut picks = sample_without_replacement(&mut rng, observed.len(), n_cells_sel);
        picks.sort_unstable();
        for p in picks {
            let j = observed[p];
            truth.push(GroundTruthCell {
                row: i,
                col: j,
                value: data.values[(i, j)],
            });
            masked.values[(i, j)] = 0.0;
            masked.mask[(i, j)] = true;
        }
    }
    Ok((masked, truth))
}

/// First `k` entries of a seeded partial Fisher–Yates shuffle of `0..n`.
///
/// Hand-rolled so the selection depends only on the ChaCha8 stream, not on
/// library internals that might change between releases.
fn sample_without_replacement(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    debug_assert!(k <= n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

// ---------------------------------------------------------------------------
// CSV input
// ---------------------------------------------------------------------------

/// Load a headered CSV of numbers into a standardized [`DataMatrix`].
///
/// Fields equal to `missing_token` (after trimming whitespace) are treated as
/// missing. Everything else must parse as a finite number.
pub fn load_csv(path: &Path, missing_token: &str) -> Result<DataMatrix> {
    let (matrix, _) = load_csv_with_labels(path, missing_token, None)?;
    Ok(matrix)
}

/// Like [`load_csv`], but optionally split off one fully observed column of
/// labels (for downstream regression) before standardizing the rest.
///
/// Labels are returned in original units; a missing value in the label column
/// is an error because downstream fits cannot pool over unlabeled rows.
pub fn load_csv_with_labels(
    path: &Path,
    missing_token: &str,
    label_column: Option<&str>,
) -> Result<(DataMatrix, Option<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let label_idx = match label_column {
        Some(name) => match headers.iter().position(|h| h == name) {
            Some(idx) => Some(idx),
            None => {
                return Err(Error::CsvParse {
                    row: 0,
                    column: name.to_string(),
                    message: "label column not found in header".into(),
                })
            }
        },
        None => None,
    };
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    if feature_names.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{} has no feature columns",
            path.display()
        )));
    }

    let mut raw_rows: Vec<Vec<f64>> = Vec::new();
    let mut mask_rows: Vec<Vec<bool>> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    for (rec_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let data_row = rec_idx + 1;
        if record.len() != headers.len() {
            return Err(Error::CsvParse {
                row: data_row,
                column: String::new(),
                message: format!(
                    "expected {} fields, found {}",
                    headers.len(),
                    record.len()
                ),
            });
        }
        let mut vals = Vec::with_capacity(feature_names.len());
        let mut miss = Vec::with_capacity(feature_names.len());
        for (j, field) in record.iter().enumerate() {
            let field = field.trim();
            let column = headers[j].clone();
            if Some(j) == label_idx {
                if field == missing_token {
                    return Err(Error::CsvParse {
                        row: data_row,
                        column,
                        message: "label column may not contain missing values".into(),
                    });
                }
                labels.push(parse_cell(field, data_row, &column)?);
            } else if field == missing_token {
                vals.push(0.0);
                miss.push(true);
            } else {
                vals.push(parse_cell(field, data_row, &column)?);
                miss.push(false);
            }
        }
        raw_rows.push(vals);
        mask_rows.push(miss);
    }
    if raw_rows.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{} has no data rows",
            path.display()
        )));
    }

    let n = raw_rows.len();
    let d = feature_names.len();
    let raw = Array2::from_shape_vec((n, d), raw_rows.into_iter().flatten().collect())
        .expect("row lengths were checked");
    let mask = Array2::from_shape_vec((n, d), mask_rows.into_iter().flatten().collect())
        .expect("row lengths were checked");
    let row_ids = (0..n).map(|i| format!("row_{i}")).collect();
    let matrix = DataMatrix::from_raw(&raw, &mask, feature_names, row_ids)?;
    Ok((matrix, label_idx.map(|_| labels)))
}

fn parse_cell(field: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| Error::CsvParse {
        row,
        column: column.to_string(),
        message: format!("cannot parse {field:?} as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::CsvParse {
            row,
            column: column.to_string(),
            message: format!("non-finite value {field:?}"),
        });
    }
    Ok(v)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => {
            if let csv::ErrorKind::Io(io) = e.into_kind() {
                Error::io(path, io)
            } else {
                unreachable!()
            }
        }
        _ => Error::CsvParse {
            row: e
                .position()
                .map(|p| p.record() as usize)
                .unwrap_or_default(),
            column: String::new(),
            message: e.to_string(),
        },
    }
}

// ---------------------------------------------------------------------------
// Dataset persistence (CSV + sidecar metadata)
// ---------------------------------------------------------------------------

/// Sidecar metadata that makes a saved dataset exactly reloadable: the
/// standardization statistics and identifiers that the bare CSV cannot carry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    pub column_names: Vec<String>,
    pub row_ids: Vec<String>,
}

/// Write a matrix as a headered CSV in original units (missing cells empty)
/// plus a JSON sidecar with the standardization statistics.
pub fn save_dataset(data: &DataMatrix, csv_path: &Path, meta_path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(csv_path).map_err(|e| csv_error(csv_path, e))?;
    writer
        .write_record(&data.column_names)
        .map_err(|e| csv_error(csv_path, e))?;
    for i in 0..data.n_rows() {
        let mut record = Vec::with_capacity(data.n_cols());
        for j in 0..data.n_cols() {
            if data.mask[(i, j)] {
                record.push(String::new());
            } else {
                let orig = data.values[(i, j)] * data.feature_stds[j] + data.feature_means[j];
                record.push(format!("{orig}"));
            }
        }
        writer
            .write_record(&record)
            .map_err(|e| csv_error(csv_path, e))?;
    }
    writer.flush().map_err(|e| Error::io(csv_path, e))?;

    let meta = DatasetMeta {
        feature_means: data.feature_means.to_vec(),
        feature_stds: data.feature_stds.to_vec(),
        column_names: data.column_names.clone(),
        row_ids: data.row_ids.clone(),
    };
    write_json(meta_path, &meta)
}

/// Reload a dataset saved by [`save_dataset`], standardizing with the stored
/// statistics (never recomputing them, so downstream stages agree exactly on
/// the scale).
pub fn load_dataset(csv_path: &Path, meta_path: &Path) -> Result<DataMatrix> {
    let meta: DatasetMeta = read_json(meta_path)?;
    let (raw, mask, names) = read_raw_csv(csv_path, "")?;
    if names != meta.column_names {
        return Err(Error::CorruptArtifact {
            path: csv_path.to_path_buf(),
            message: "column names disagree with the dataset metadata".into(),
        });
    }
    if raw.nrows() != meta.row_ids.len() || raw.ncols() != meta.feature_means.len() {
        return Err(Error::CorruptArtifact {
            path: csv_path.to_path_buf(),
            message: format!(
                "matrix is {}x{} but metadata describes {}x{}",
                raw.nrows(),
                raw.ncols(),
                meta.row_ids.len(),
                meta.feature_means.len()
            ),
        });
    }
    let mut values = Array2::zeros(raw.dim());
    for ((i, j), v) in raw.indexed_iter() {
        if !mask[(i, j)] {
            values[(i, j)] = (v - meta.feature_means[j]) / meta.feature_stds[j];
        }
    }
    Ok(DataMatrix {
        values,
        mask,
        feature_means: Array1::from_vec(meta.feature_means),
        feature_stds: Array1::from_vec(meta.feature_stds),
        column_names: meta.column_names,
        row_ids: meta.row_ids,
    })
}

/// Parse a headered numeric CSV without standardizing.
fn read_raw_csv(path: &Path, missing_token: &str) -> Result<(Array2<f64>, Array2<bool>, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut vals = Vec::new();
    let mut miss = Vec::new();
    let mut n = 0usize;
    for (rec_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != names.len() {
            return Err(Error::CsvParse {
                row: rec_idx + 1,
                column: String::new(),
                message: format!("expected {} fields, found {}", names.len(), record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            let field = field.trim();
            if field == missing_token {
                vals.push(0.0);
                miss.push(true);
            } else {
                vals.push(parse_cell(field, rec_idx + 1, &names[j])?);
                miss.push(false);
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyInput(format!("{} has no data rows", path.display())));
    }
    let d = names.len();
    let raw = Array2::from_shape_vec((n, d), vals).expect("row lengths were checked");
    let mask = Array2::from_shape_vec((n, d), miss).expect("row lengths were checked");
    Ok((raw, mask, names))
}

// ---------------------------------------------------------------------------
// Ground truth persistence
// ---------------------------------------------------------------------------

/// Write held-out cells as CSV (`row,col,row_id,column_name,value`), with the
/// value in standardized units — the scale every evaluation metric uses.
pub fn save_ground_truth(cells: &[GroundTruthCell], data: &DataMatrix, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer
        .write_record(["row", "col", "row_id", "column_name", "value"])
        .map_err(|e| csv_error(path, e))?;
    for cell in cells {
        writer
            .write_record([
                cell.row.to_string(),
                cell.col.to_string(),
                data.row_ids[cell.row].clone(),
                data.column_names[cell.col].clone(),
                format!("{}", cell.value),
            ])
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Reload ground truth written by [`save_ground_truth`].
pub fn load_ground_truth(path: &Path) -> Result<Vec<GroundTruthCell>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut cells = Vec::new();
    for (rec_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = rec_idx + 1;
        let get = |idx: usize, name: &str| -> Result<&str> {
            record.get(idx).ok_or_else(|| Error::CsvParse {
                row,
                column: name.to_string(),
                message: "missing field".into(),
            })
        };
        cells.push(GroundTruthCell {
            row: get(0, "row")?.trim().parse().map_err(|_| Error::CsvParse {
                row,
                column: "row".into(),
                message: "cannot parse row index".into(),
            })?,
            col: get(1, "col")?.trim().parse().map_err(|_| Error::CsvParse {
                row,
                column: "col".into(),
                message: "cannot parse column index".into(),
            })?,
            value: parse_cell(get(4, "value")?.trim(), row, "value")?,
        });
    }
    Ok(cells)
}

// ---------------------------------------------------------------------------
// Labels persistence
// ---------------------------------------------------------------------------

/// Write per-row labels (`row_id,label`) for the downstream stage.
pub fn save_labels(row_ids: &[String], labels: &[f64], path: &Path) -> Result<()> {
    if row_ids.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} row ids but {} labels",
            row_ids.len(),
            labels.len()
        )));
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer
        .write_record(["row_id", "label"])
        .map_err(|e| csv_error(path, e))?;
    for (id, y) in row_ids.iter().zip(labels) {
        writer
            .write_record([id.clone(), format!("{y}")])
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Reload labels written by [`save_labels`].
pub fn load_labels(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut labels = Vec::new();
    for (rec_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let field = record.get(1).unwrap_or("").trim();
        labels.push(parse_cell(field, rec_idx + 1, "label")?);
    }
    Ok(labels)
}

// ---------------------------------------------------------------------------
// Imputation set persistence
// ---------------------------------------------------------------------------

/// Manifest describing a saved imputation set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub method: Method,
    pub beta: f64,
    pub seed: u64,
    pub m: usize,
    pub s: usize,
    pub burn_in: usize,
    pub files: Vec<ManifestFile>,
}

/// One completed-matrix CSV and its checksum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub sha256: String,
}

/// Write an imputation set as one completed CSV per draw (original units)
/// plus `manifest.json` with per-file SHA-256 checksums. Returns the manifest
/// path. Refuses to clobber an existing manifest unless `overwrite` is set.
pub fn save_imputations(set: &ImputationSet, dir: &Path, overwrite: bool) -> Result<PathBuf> {
    let manifest_path = dir.join("manifest.json");
    if manifest_path.exists() && !overwrite {
        return Err(Error::AlreadyExists {
            path: manifest_path,
        });
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut files = Vec::with_capacity(set.draws.len());
    for (m, draw) in set.draws.iter().enumerate() {
        let name = format!("imp_{m:04}.csv");
        let path = dir.join(&name);
        let mut writer = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        writer
            .write_record(&set.column_names)
            .map_err(|e| csv_error(&path, e))?;
        for i in 0..draw.nrows() {
            let mut record = Vec::with_capacity(draw.ncols());
            for j in 0..draw.ncols() {
                let orig = draw[(i, j)] * set.feature_stds[j] + set.feature_means[j];
                record.push(format!("{orig}"));
            }
            writer
                .write_record(&record)
                .map_err(|e| csv_error(&path, e))?;
        }
        writer.flush().map_err(|e| Error::io(&path, e))?;
        files.push(ManifestFile {
            path: name,
            sha256: sha256_file(&path)?,
        });
    }

    let manifest = Manifest {
        method: set.config.method,
        beta: set.beta,
        seed: set.config.seed,
        m: set.draws.len(),
        s: set.config.iterations,
        burn_in: set.config.burn_in,
        files,
    };
    write_json(&manifest_path, &manifest)?;
    Ok(manifest_path)
}

/// Reload an imputation set saved by [`save_imputations`], re-standardizing
/// the draws with the statistics carried by `data` (which must be the matrix
/// the imputations were computed for).
///
/// Checksums are verified; a mismatch means the artifact was edited or
/// corrupted and is rejected.
pub fn load_imputations(manifest_path: &Path, data: &DataMatrix) -> Result<ImputationSet> {
    let manifest: Manifest = read_json(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    if manifest.files.len() != manifest.m {
        return Err(Error::CorruptArtifact {
            path: manifest_path.to_path_buf(),
            message: format!(
                "manifest lists {} files but m = {}",
                manifest.files.len(),
                manifest.m
            ),
        });
    }

    let mut draws = Vec::with_capacity(manifest.files.len());
    for file in &manifest.files {
        let path = dir.join(&file.path);
        let digest = sha256_file(&path)?;
        if digest != file.sha256 {
            return Err(Error::CorruptArtifact {
                path,
                message: format!(
                    "checksum mismatch: manifest says {}, file hashes to {digest}",
                    file.sha256
                ),
            });
        }
        let (raw, miss, names) = read_raw_csv(&path, "")?;
        if miss.iter().any(|&m| m) {
            return Err(Error::CorruptArtifact {
                path,
                message: "imputed matrix contains missing cells".into(),
            });
        }
        if names != data.column_names || raw.dim() != data.values.dim() {
            return Err(Error::CorruptArtifact {
                path,
                message: "imputed matrix does not match the dataset's shape or columns".into(),
            });
        }
        let mut std_vals = Array2::zeros(raw.dim());
        for ((i, j), v) in raw.indexed_iter() {
            std_vals[(i, j)] = (v - data.feature_means[j]) / data.feature_stds[j];
        }
        draws.push(std_vals);
    }

    Ok(ImputationSet {
        draws,
        mask: data.mask.clone(),
        feature_means: data.feature_means.clone(),
        feature_stds: data.feature_stds.clone(),
        column_names: data.column_names.clone(),
        row_ids: data.row_ids.clone(),
        traces: Vec::new(),
        config: SamplerConfig {
            method: manifest.method,
            iterations: manifest.s,
            burn_in: manifest.burn_in,
            m_draws: manifest.m,
            seed: manifest.seed,
            beta: Some(manifest.beta),
        },
        beta: manifest.beta,
        acceptance_rate: None,
        effective_sample_size: None,
    })
}

// ---------------------------------------------------------------------------
// Small shared helpers
// ---------------------------------------------------------------------------

/// SHA-256 of a file's bytes, lowercase hex.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex_digest(&hasher.finalize()))
}

/// SHA-256 of a byte slice, lowercase hex.
pub fn sha256_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_digest(&hasher.finalize())
}

fn hex_digest(digest: &[u8]) -> String {
    let mut out = String::with_capacity(digest.len() * 2);
    for byte in digest {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

/// Serialize a value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    body.push('\n');
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Deserialize a JSON file.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&body).map_err(|e| Error::json(path, e))
}
