use std::path::Path;

use ndarray::{Array2, Axis};

use super::{Dataset, Labels};
use crate::error::{Error, Result};

/// Loads a headed, comma-separated numeric table.
///
/// Every column except `label_column` becomes a feature. Labels that are
/// all non-negative integers become classes `0..=max`; anything else is a
/// regression target.
pub fn load_tabular_csv(path: impl AsRef<Path>, label_column: &str, normalize: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, 0, "-", e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| csv_error(path, 1, "-", e.to_string()))?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| csv_error(path, 1, label_column, "label column not found in header".into()))?;
    let n_cols = headers.len();

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // header is row 1
        let row = i + 2;
        let record = record.map_err(|e| csv_error(path, row, "-", e.to_string()))?;
        if record.len() != n_cols {
            return Err(csv_error(
                path,
                row,
                "-",
                format!("expected {n_cols} fields, found {}", record.len()),
            ));
        }
        for (c, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| {
                csv_error(path, row, &headers[c], format!("non-numeric cell {cell:?}"))
            })?;
            if !value.is_finite() {
                return Err(csv_error(path, row, &headers[c], format!("non-finite cell {cell:?}")));
            }
            if c == label_idx {
                raw_labels.push(value);
            } else {
                features.push(value);
            }
        }
    }
    let n_rows = raw_labels.len();
    let mut inputs = Array2::from_shape_vec((n_rows, n_cols - 1), features).expect("row width checked");
    if normalize {
        zscore_in_place(&mut inputs);
    }
    let labels = infer_labels(raw_labels);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "tabular".into());
    Dataset::new(name, inputs, labels)
}

fn csv_error(path: &Path, row: usize, column: &str, message: String) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message,
    }
}

fn infer_labels(raw: Vec<f64>) -> Labels {
    let integral = raw.iter().all(|&v| v >= 0.0 && v.fract() == 0.0 && v < 1e6);
    if integral && !raw.is_empty() {
        let values: Vec<usize> = raw.iter().map(|&v| v as usize).collect();
        let n_classes = values.iter().copied().max().unwrap_or(0) + 1;
        Labels::Class {
            values,
            n_classes: n_classes.max(2),
        }
    } else {
        Labels::Real(raw)
    }
}

/// Centers every column and divides by its population standard deviation.
/// Constant columns are only centered.
pub fn zscore_in_place(inputs: &mut Array2<f64>) {
    if inputs.nrows() == 0 {
        return;
    }
    for mut column in inputs.axis_iter_mut(Axis(1)) {
        let n = column.len() as f64;
        let mean = column.sum() / n;
        let var = column.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        column.mapv_inplace(|v| if sd > 0.0 { (v - mean) / sd } else { v - mean });
    }
}
