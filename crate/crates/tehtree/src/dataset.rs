//! Randomized-trial data: ingestion, validation, and train/holdout splits.
//!
//! CSV format: UTF-8, comma separated, `.` decimal, header row required.
//! The outcome and treatment columns are named by the caller; every other
//! column whose cells all parse as finite numbers becomes a covariate
//! (column order preserved). A column containing no numeric cell at all is
//! skipped as metadata; a column that mixes numeric and non-numeric cells is
//! a parse error. A covariate is flagged binary iff its value set is a
//! subset of {0, 1}.

use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

/// Covariate kind, auto-detected from the observed value set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ColKind {
    Binary,
    Continuous,
}

/// Outcomes, a binary treatment indicator, and a covariate matrix.
///
/// Immutable after construction; all invariants are checked in [`TrialDataset::new`].
#[derive(Debug, Clone)]
pub struct TrialDataset {
    y: Vec<f64>,
    z: Vec<u8>,
    x: Array2<f64>,
    col_names: Vec<String>,
    col_kind: Vec<ColKind>,
    outcome_name: String,
    treatment_name: String,
}

impl TrialDataset {
    /// Validate and build a dataset. `z` must be 0/1 with both arms present,
    /// all values finite, `n >= 4`, and every column flagged binary must
    /// contain only {0, 1} (kinds are auto-detected here).
    pub fn new(
        y: Vec<f64>,
        z: Vec<u8>,
        x: Array2<f64>,
        col_names: Vec<String>,
    ) -> Result<Self> {
        Self::with_names(y, z, x, col_names, "y".into(), "z".into())
    }

    pub fn with_names(
        y: Vec<f64>,
        z: Vec<u8>,
        x: Array2<f64>,
        col_names: Vec<String>,
        outcome_name: String,
        treatment_name: String,
    ) -> Result<Self> {
        let n = y.len();
        if z.len() != n || x.nrows() != n {
            return Err(Error::Validation(format!(
                "length mismatch: y has {n} rows, z has {}, x has {}",
                z.len(),
                x.nrows()
            )));
        }
        if n < 4 {
            return Err(Error::Validation(format!(
                "need at least 4 subjects, got {n}"
            )));
        }
        if col_names.len() != x.ncols() {
            return Err(Error::Validation(format!(
                "{} column names for {} covariate columns",
                col_names.len(),
                x.ncols()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite outcome at row {}",
                i + 1
            )));
        }
        if let Some(i) = z.iter().position(|&v| v > 1) {
            return Err(Error::Validation(format!(
                "treatment must be 0 or 1, found {} at row {}",
                z[i],
                i + 1
            )));
        }
        let n_treated: usize = z.iter().map(|&v| v as usize).sum();
        if n_treated == 0 || n_treated == n {
            return Err(Error::Validation(
                "both arms must be nonempty (single-arm data)".into(),
            ));
        }
        if let Some(((i, j), v)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            let _ = v;
            return Err(Error::Validation(format!(
                "non-finite covariate '{}' at row {}",
                col_names[j],
                i + 1
            )));
        }
        let col_kind = (0..x.ncols())
            .map(|j| {
                if x.column(j).iter().all(|&v| v == 0.0 || v == 1.0) {
                    ColKind::Binary
                } else {
                    ColKind::Continuous
                }
            })
            .collect();
        Ok(Self {
            y,
            z,
            x,
            col_names,
            col_kind,
            outcome_name,
            treatment_name,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn z(&self) -> &[u8] {
        &self.z
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn x_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.x.row(i)
    }

    pub fn col_names(&self) -> &[String] {
        &self.col_names
    }

    pub fn col_kind(&self) -> &[ColKind] {
        &self.col_kind
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn treatment_name(&self) -> &str {
        &self.treatment_name
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.z[i] == 1).collect()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.z[i] == 0).collect()
    }

    /// Row subset in the given order. The subset must itself be a valid
    /// dataset (n >= 4, both arms present).
    pub fn subset(&self, rows: &[usize]) -> Result<TrialDataset> {
        let y = rows.iter().map(|&i| self.y[i]).collect();
        let z = rows.iter().map(|&i| self.z[i]).collect();
        let mut x = Array2::zeros((rows.len(), self.p()));
        for (r, &i) in rows.iter().enumerate() {
            x.row_mut(r).assign(&self.x.row(i));
        }
        TrialDataset::with_names(
            y,
            z,
            x,
            self.col_names.clone(),
            self.outcome_name.clone(),
            self.treatment_name.clone(),
        )
    }

    /// Read a trial dataset from CSV. See the module docs for the format.
    pub fn load_csv(
        path: impl AsRef<Path>,
        outcome: &str,
        treatment: &str,
    ) -> Result<TrialDataset> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path.as_ref())?;
        let headers: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
        let find = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Validation(format!("column '{name}' not found in header")))
        };
        let y_col = find(outcome)?;
        let z_col = find(treatment)?;
        if y_col == z_col {
            return Err(Error::Validation(
                "outcome and treatment must be different columns".into(),
            ));
        }

        let mut cells: Vec<Vec<String>> = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != headers.len() {
                return Err(Error::Parse {
                    row: i + 1,
                    col: String::new(),
                    msg: format!("expected {} fields, got {}", headers.len(), record.len()),
                });
            }
            cells.push(record.iter().map(|s| s.to_string()).collect());
        }
        let n = cells.len();
        if n == 0 {
            return Err(Error::Validation("no data rows".into()));
        }

        let parse_cell = |raw: &str| -> Option<f64> {
            if raw.is_empty() {
                return None;
            }
            raw.parse::<f64>().ok().filter(|v| v.is_finite())
        };
        let numeric_column = |col: usize| -> Result<Vec<f64>> {
            cells
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    parse_cell(&row[col]).ok_or_else(|| Error::Parse {
                        row: i + 1,
                        col: headers[col].clone(),
                        msg: if row[col].is_empty() {
                            "missing value".into()
                        } else {
                            format!("'{}' is not a finite number", row[col])
                        },
                    })
                })
                .collect()
        };

        let y = numeric_column(y_col)?;
        let z_raw = numeric_column(z_col)?;
        let mut z = Vec::with_capacity(n);
        for (i, &v) in z_raw.iter().enumerate() {
            if v == 0.0 {
                z.push(0u8);
            } else if v == 1.0 {
                z.push(1u8);
            } else {
                return Err(Error::Validation(format!(
                    "treatment column '{treatment}' must be 0 or 1, found {} at row {}",
                    v,
                    i + 1
                )));
            }
        }

        // Remaining columns: fully numeric -> covariate; no numeric cell at
        // all -> skipped; mixed -> parse error at the first bad cell.
        let mut col_names = Vec::new();
        let mut columns: Vec<Vec<f64>> = Vec::new();
        for col in 0..headers.len() {
            if col == y_col || col == z_col {
                continue;
            }
            let any_numeric = cells.iter().any(|row| parse_cell(&row[col]).is_some());
            if !any_numeric {
                continue;
            }
            columns.push(numeric_column(col)?);
            col_names.push(headers[col].clone());
        }
        let p = columns.len();
        let mut x = Array2::zeros((n, p));
        for (j, colv) in columns.iter().enumerate() {
            for (i, &v) in colv.iter().enumerate() {
                x[[i, j]] = v;
            }
        }
        TrialDataset::with_names(y, z, x, col_names, outcome.into(), treatment.into())
    }

    /// Write the dataset back to CSV. Numbers are printed in shortest
    /// round-trip form, so a save/load cycle is bit-exact.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        let mut header = vec![self.outcome_name.clone(), self.treatment_name.clone()];
        header.extend(self.col_names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![format!("{}", self.y[i]), format!("{}", self.z[i])];
            rec.extend(self.x.row(i).iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Disjoint train/holdout row partition; either part may be empty, and any
/// nonempty part contains both arms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub holdout: Vec<usize>,
}

/// Stratified train/holdout split: the training set receives
/// `ceil(train_frac * arm size)` subjects from each arm, sampled without
/// replacement. `train_frac = 1` puts everything in training (single-sample
/// mode). Index vectors are sorted ascending.
pub fn split_train_holdout(
    data: &TrialDataset,
    train_frac: f64,
    seed: u64,
) -> Result<SplitIndices> {
    if !(train_frac > 0.0 && train_frac <= 1.0) {
        return Err(Error::Config(format!(
            "train_frac must be in (0, 1], got {train_frac}"
        )));
    }
    if train_frac == 1.0 {
        return Ok(SplitIndices {
            train: (0..data.n()).collect(),
            holdout: Vec::new(),
        });
    }
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for (arm, tag) in [(data.control_indices(), 0u64), (data.treated_indices(), 1u64)] {
        let take = (train_frac * arm.len() as f64).ceil() as usize;
        if take < 2 {
            return Err(Error::Validation(format!(
                "training arm too small after split: {} of {} subjects",
                take,
                arm.len()
            )));
        }
        if arm.len() - take < 1 {
            return Err(Error::Validation(format!(
                "holdout arm empty after split: train takes {} of {} subjects",
                take,
                arm.len()
            )));
        }
        let mut shuffled = arm.clone();
        let mut rng = stream_rng(seed, &[stream::SPLIT, tag]);
        shuffled.shuffle(&mut rng);
        train.extend_from_slice(&shuffled[..take]);
        holdout.extend_from_slice(&shuffled[take..]);
    }
    train.sort_unstable();
    holdout.sort_unstable();
    Ok(SplitIndices { train, holdout })
}
