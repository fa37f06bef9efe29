//! Synthetic stand-in for the Pima diabetes table: 768 rows, eight clinical
//! features and a binary `Outcome` with a 522/246 (68/32) class split.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Labels};
use crate::error::{Error, Result};
use crate::rng;

pub const PIMA_COLUMNS: [&str; 9] = [
    "Pregnancies",
    "Glucose",
    "BloodPressure",
    "SkinThickness",
    "Insulin",
    "BMI",
    "DiabetesPedigreeFunction",
    "Age",
    "Outcome",
];
pub const PIMA_ROWS: usize = 768;
pub const PIMA_NEGATIVES: usize = 522;

struct FeatureModel {
    /// (mean, sd) for outcome 0 and 1.
    by_class: [(f64, f64); 2],
    min: f64,
    decimals: i32,
}

const FEATURES: [FeatureModel; 8] = [
    FeatureModel { by_class: [(3.3, 3.0), (4.9, 3.7)], min: 0.0, decimals: 0 },
    FeatureModel { by_class: [(110.0, 26.0), (141.0, 32.0)], min: 44.0, decimals: 0 },
    FeatureModel { by_class: [(68.0, 18.0), (71.0, 21.0)], min: 0.0, decimals: 0 },
    FeatureModel { by_class: [(20.0, 15.0), (22.0, 17.0)], min: 0.0, decimals: 0 },
    FeatureModel { by_class: [(69.0, 98.0), (100.0, 138.0)], min: 0.0, decimals: 0 },
    FeatureModel { by_class: [(30.3, 7.7), (35.1, 7.3)], min: 18.0, decimals: 1 },
    FeatureModel { by_class: [(0.43, 0.30), (0.55, 0.37)], min: 0.078, decimals: 3 },
    FeatureModel { by_class: [(31.0, 11.7), (37.0, 11.0)], min: 21.0, decimals: 0 },
];

fn round_to(v: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (v * scale).round() / scale
}

/// Rows of `[features..., outcome]`, deterministic in `seed`.
pub fn pima_like_rows(seed: u64) -> Vec<[f64; 9]> {
    let mut rng = rng::rng_for(seed, &[rng::stream::SYNTHETIC]);
    let mut outcomes: Vec<usize> = (0..PIMA_ROWS).map(|i| usize::from(i >= PIMA_NEGATIVES)).collect();
    outcomes.shuffle(&mut rng);
    outcomes
        .into_iter()
        .map(|y| {
            let mut row = [0.0; 9];
            for (slot, feature) in row.iter_mut().zip(&FEATURES) {
                let (mean, sd) = feature.by_class[y];
                let draw = Normal::new(mean, sd).expect("positive sd").sample(&mut rng);
                *slot = round_to(draw.max(feature.min), feature.decimals);
            }
            row[8] = y as f64;
            row
        })
        .collect()
}

/// The synthetic table as an unnormalized dataset.
pub fn pima_like(seed: u64) -> Dataset {
    let rows = pima_like_rows(seed);
    let inputs = Array2::from_shape_fn((rows.len(), 8), |(i, j)| rows[i][j]);
    let labels = Labels::Class {
        values: rows.iter().map(|r| r[8] as usize).collect(),
        n_classes: 2,
    };
    Dataset::new("pima-synthetic", inputs, labels).expect("generated rows are valid")
}

/// Writes the synthetic table as CSV with the Pima header.
pub fn write_pima_like_csv(path: &Path, seed: u64) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::fs::File::create(path).map_err(io_err)?;
    let mut text = PIMA_COLUMNS.join(",");
    text.push('\n');
    for row in pima_like_rows(seed) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    out.write_all(text.as_bytes()).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_imbalance() {
        let d = pima_like(0);
        assert_eq!(d.len(), 768);
        assert_eq!(d.n_features(), 8);
        let freq = d.class_frequencies().unwrap();
        assert!((freq[0] - 522.0 / 768.0).abs() < 1e-12);
        assert!((freq[0] - 0.68).abs() < 0.005);
    }

    #[test]
    fn csv_round_trip_through_loader() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pima.csv");
        write_pima_like_csv(&p, 3).unwrap();
        let loaded = crate::data::load_tabular_csv(&p, "Outcome", false).unwrap();
        let direct = pima_like(3);
        assert_eq!(loaded.inputs(), direct.inputs());
        assert_eq!(loaded.labels(), direct.labels());
    }
}
