use std::collections::BTreeSet;
use std::path::Path;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngState};

/// Train / validation / test fractions.
pub const DEFAULT_SPLIT_FRACTIONS: [f64; 3] = [0.7, 0.1, 0.2];

#[derive(Debug, Clone, PartialEq)]
pub struct CsvSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Label string for each class index.
    pub label_names: Vec<String>,
    /// Per-feature mean and standard deviation from the train split.
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
}

/// Reads a headered, comma-separated file. Every column other than
/// `label_column` must be numeric. Rows are shuffled with `seed`, split by
/// `fractions`, and standardized with train-split statistics.
pub fn load_csv(path: &Path, label_column: &str, fractions: [f64; 3], seed: u64) -> Result<CsvSplits> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions {fractions:?} must be >= 0 and sum to 1")));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::Data(format!("{}: no column named `{label_column}`", path.display())))?;
    let feature_names: Vec<&str> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h)
        .collect();

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(row as u64 + 2, |p| p.line());
        if record.len() != headers.len() {
            return Err(Error::Data(format!(
                "{}: line {line} has {} fields, header has {}",
                path.display(),
                record.len(),
                headers.len()
            )));
        }
        for (i, cell) in record.iter().enumerate() {
            if i == label_idx {
                raw_labels.push(cell.trim().to_string());
                continue;
            }
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: line {line}, column `{}`: `{cell}` is not numeric",
                    path.display(),
                    headers.get(i).unwrap_or("?")
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!("{}: line {line}: non-finite value", path.display())));
            }
            features.push(v);
        }
    }
    let n = raw_labels.len();
    if n == 0 {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    if feature_names.is_empty() {
        return Err(Error::Data(format!("{}: no feature columns", path.display())));
    }
    let d = feature_names.len();

    // Integer labels sort numerically, anything else lexicographically.
    let distinct: BTreeSet<&str> = raw_labels.iter().map(String::as_str).collect();
    let mut label_names: Vec<String> = distinct.into_iter().map(str::to_string).collect();
    if label_names.iter().all(|l| l.parse::<i64>().is_ok()) {
        label_names.sort_by_key(|l| l.parse::<i64>().expect("checked"));
    }
    let y_all: Vec<usize> = raw_labels
        .iter()
        .map(|l| label_names.iter().position(|n| n == l).expect("present"))
        .collect();
    let classes = label_names.len();
    let x_all = Matrix::from_vec(n, d, features)?;

    let mut order: Vec<usize> = (0..n).collect();
    RngState::new(seed).shuffle(&mut order);
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let (train_idx, rest) = order.split_at(n_train);
    let (val_idx, test_idx) = rest.split_at(n_val);

    let mut mean = vec![0.0; d];
    let mut std = vec![1.0; d];
    if !train_idx.is_empty() {
        for j in 0..d {
            let m = train_idx.iter().map(|&i| x_all.get(i, j)).sum::<f64>() / train_idx.len() as f64;
            let var = train_idx.iter().map(|&i| (x_all.get(i, j) - m).powi(2)).sum::<f64>() / train_idx.len() as f64;
            mean[j] = m;
            std[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
    }
    let make = |idx: &[usize], split: Split| -> Result<Dataset> {
        let mut x = x_all.select_rows(idx);
        for r in 0..x.rows() {
            for (j, v) in x.row_mut(r).iter_mut().enumerate() {
                *v = (*v - mean[j]) / std[j];
            }
        }
        Dataset::new(x, idx.iter().map(|&i| y_all[i]).collect(), classes, split)
    };
    Ok(CsvSplits {
        train: make(train_idx, Split::Train)?,
        val: make(val_idx, Split::Val)?,
        test: make(test_idx, Split::Test)?,
        label_names,
        feature_mean: mean,
        feature_std: std,
    })
}
