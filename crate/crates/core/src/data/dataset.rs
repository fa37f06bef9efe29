use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Per-sample targets.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// Class indices in `[0, n_classes)`.
    Class { values: Vec<usize>, n_classes: usize },
    /// Real-valued regression targets.
    Real(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Class { values, .. } => values.len(),
            Labels::Real(values) => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self {
            Labels::Class { n_classes, .. } => Some(*n_classes),
            Labels::Real(_) => None,
        }
    }

    pub fn classes(&self) -> Option<&[usize]> {
        match self {
            Labels::Class { values, .. } => Some(values),
            Labels::Real(_) => None,
        }
    }

    fn select(&self, indices: &[usize]) -> Labels {
        match self {
            Labels::Class { values, n_classes } => Labels::Class {
                values: indices.iter().map(|&i| values[i]).collect(),
                n_classes: *n_classes,
            },
            Labels::Real(values) => Labels::Real(indices.iter().map(|&i| values[i]).collect()),
        }
    }
}

/// A labeled sample matrix. Rows are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    inputs: Array2<f64>,
    labels: Labels,
}

impl Dataset {
    pub fn new(name: impl Into<String>, inputs: Array2<f64>, labels: Labels) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.nrows(),
                actual: labels.len(),
                context: "label count vs input rows",
            });
        }
        if let Some(bad) = inputs.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite feature at row {}",
                bad / inputs.ncols().max(1)
            )));
        }
        if let Labels::Class { values, n_classes } = &labels {
            if let Some(&label) = values.iter().find(|&&l| l >= *n_classes) {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: *n_classes,
                });
            }
        }
        if let Labels::Real(values) = &labels {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("non-finite regression target"));
            }
        }
        Ok(Dataset {
            name: name.into(),
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.labels.n_classes()
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            inputs: self.inputs.select(Axis(0), indices),
            labels: self.labels.select(indices),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Concatenates datasets with the same feature width and label kind.
    pub fn concat(name: impl Into<String>, parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("cannot concatenate zero datasets"))?;
        let views: Vec<_> = parts.iter().map(|d| d.inputs.view()).collect();
        let inputs = ndarray::concatenate(Axis(0), &views).map_err(|_| Error::DimensionMismatch {
            expected: first.n_features(),
            actual: parts
                .iter()
                .map(|d| d.n_features())
                .find(|&w| w != first.n_features())
                .unwrap_or(0),
            context: "feature width in concat",
        })?;
        let labels = match &first.labels {
            Labels::Class { n_classes, .. } => {
                let mut values = Vec::with_capacity(inputs.nrows());
                let mut classes = *n_classes;
                for part in parts {
                    match &part.labels {
                        Labels::Class { values: v, n_classes } => {
                            values.extend_from_slice(v);
                            classes = classes.max(*n_classes);
                        }
                        Labels::Real(_) => {
                            return Err(Error::invalid("cannot mix class and real labels"))
                        }
                    }
                }
                Labels::Class {
                    values,
                    n_classes: classes,
                }
            }
            Labels::Real(_) => {
                let mut values = Vec::with_capacity(inputs.nrows());
                for part in parts {
                    match &part.labels {
                        Labels::Real(v) => values.extend_from_slice(v),
                        Labels::Class { .. } => {
                            return Err(Error::invalid("cannot mix class and real labels"))
                        }
                    }
                }
                Labels::Real(values)
            }
        };
        Dataset::new(name, inputs, labels)
    }

    /// Fraction of samples in each class.
    pub fn class_frequencies(&self) -> Option<Vec<f64>> {
        let (values, k) = match &self.labels {
            Labels::Class { values, n_classes } => (values, *n_classes),
            Labels::Real(_) => return None,
        };
        let mut counts = vec![0usize; k];
        for &v in values {
            counts[v] += 1;
        }
        let n = values.len().max(1) as f64;
        Some(counts.into_iter().map(|c| c as f64 / n).collect())
    }
}
