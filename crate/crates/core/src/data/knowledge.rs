use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// How a test subject's knowledge of the domain grows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeMode {
    /// Samples whose label is below the degree (quality of knowledge).
    LabelsPrefix,
    /// A uniform random fraction of the samples (quantity of knowledge).
    IidFraction,
}

impl fmt::Display for KnowledgeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KnowledgeMode::LabelsPrefix => "labels_prefix",
            KnowledgeMode::IidFraction => "iid_fraction",
        })
    }
}

/// Sample indices known at a given degree, in ascending order.
///
/// Slices are nested: for a fixed seed, a higher degree always contains the
/// lower one.
pub fn knowledge_indices(data: &Dataset, mode: KnowledgeMode, degree: f64, rng_seed: u64) -> Result<Vec<usize>> {
    match mode {
        KnowledgeMode::LabelsPrefix => {
            let labels = data
                .labels()
                .classes()
                .ok_or_else(|| Error::invalid("labels_prefix needs class labels"))?;
            let k = data.n_classes().expect("class labels");
            if degree.fract() != 0.0 || degree < 1.0 || degree > k as f64 {
                return Err(Error::invalid(format!(
                    "labels_prefix degree must be an integer in [1, {k}], got {degree}"
                )));
            }
            let limit = degree as usize;
            Ok((0..data.len()).filter(|&i| labels[i] < limit).collect())
        }
        KnowledgeMode::IidFraction => {
            if !(degree > 0.0 && degree <= 1.0) {
                return Err(Error::invalid(format!(
                    "iid_fraction degree must lie in (0, 1], got {degree}"
                )));
            }
            let count = ((degree * data.len() as f64).round() as usize).clamp(1, data.len());
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut rng::rng_for(rng_seed, &[rng::stream::KNOWLEDGE]));
            let mut chosen = order[..count].to_vec();
            chosen.sort_unstable();
            Ok(chosen)
        }
    }
}

/// The test subject's local dataset at a knowledge degree.
pub fn knowledge_slice(data: &Dataset, mode: KnowledgeMode, degree: f64, rng_seed: u64) -> Result<Dataset> {
    let indices = knowledge_indices(data, mode, degree, rng_seed)?;
    Ok(data
        .select(&indices)
        .with_name(format!("{}[{mode}={degree}]", data.name)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Labels;
    use ndarray::Array2;

    fn digits(n: usize) -> Dataset {
        Dataset::new(
            "d",
            Array2::from_shape_fn((n, 1), |(i, _)| i as f64),
            Labels::Class {
                values: (0..n).map(|i| (i * 7) % 10).collect(),
                n_classes: 10,
            },
        )
        .unwrap()
    }

    #[test]
    fn full_label_degree_is_whole_dataset() {
        let d = digits(50);
        let s = knowledge_slice(&d, KnowledgeMode::LabelsPrefix, 10.0, 0).unwrap();
        assert_eq!(s.inputs(), d.inputs());
        assert_eq!(s.labels(), d.labels());
    }

    #[test]
    fn two_labels_only() {
        let s = knowledge_slice(&digits(100), KnowledgeMode::LabelsPrefix, 2.0, 0).unwrap();
        assert!(!s.is_empty());
        assert!(s.labels().classes().unwrap().iter().all(|&y| y < 2));
    }

    #[test]
    fn tenth_of_a_percent_of_sixty_thousand() {
        let d = Dataset::new(
            "big",
            Array2::zeros((60_000, 1)),
            Labels::Class {
                values: vec![0; 60_000],
                n_classes: 10,
            },
        )
        .unwrap();
        assert_eq!(knowledge_slice(&d, KnowledgeMode::IidFraction, 0.001, 9).unwrap().len(), 60);
    }

    #[test]
    fn out_of_range_degrees() {
        let d = digits(20);
        assert!(knowledge_slice(&d, KnowledgeMode::LabelsPrefix, 0.0, 0).is_err());
        assert!(knowledge_slice(&d, KnowledgeMode::LabelsPrefix, 11.0, 0).is_err());
        assert!(knowledge_slice(&d, KnowledgeMode::LabelsPrefix, 2.5, 0).is_err());
        assert!(knowledge_slice(&d, KnowledgeMode::IidFraction, 0.0, 0).is_err());
        assert!(knowledge_slice(&d, KnowledgeMode::IidFraction, 1.5, 0).is_err());
    }

    #[test]
    fn slices_are_nested() {
        let d = digits(500);
        for mode in [KnowledgeMode::LabelsPrefix, KnowledgeMode::IidFraction] {
            let degrees: Vec<f64> = match mode {
                KnowledgeMode::LabelsPrefix => (1..=10).map(f64::from).collect(),
                KnowledgeMode::IidFraction => vec![0.01, 0.1, 0.3, 0.7, 1.0],
            };
            for w in degrees.windows(2) {
                let small = knowledge_indices(&d, mode, w[0], 4).unwrap();
                let big = knowledge_indices(&d, mode, w[1], 4).unwrap();
                assert!(small.iter().all(|i| big.binary_search(i).is_ok()));
            }
        }
    }
}
