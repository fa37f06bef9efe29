use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flattened model parameters, or an additive update to them.
///
/// Layout is layer by layer: the weight matrix `[n_in][n_out]` row-major,
/// then the bias `[n_out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    fn check_len(&self, other: &ParamVector, context: &'static str) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: other.len(),
                context,
            });
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Squared L2 distance. Panics on length mismatch.
    pub fn dist_sq(&self, other: &ParamVector) -> f64 {
        assert_eq!(self.len(), other.len(), "dist_sq length mismatch");
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| {
                let d = a - b;
                d * d
            })
            .sum()
    }

    pub fn dist(&self, other: &ParamVector) -> f64 {
        self.dist_sq(other).sqrt()
    }

    pub fn try_sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_len(other, "vector subtraction")?;
        Ok(self.sub(other))
    }

    /// `self - other`. Panics on length mismatch.
    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        assert_eq!(self.len(), other.len(), "sub length mismatch");
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// `self + other`. Panics on length mismatch.
    pub fn add(&self, other: &ParamVector) -> ParamVector {
        assert_eq!(self.len(), other.len(), "add length mismatch");
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn scale(&self, c: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|v| v * c).collect())
    }

    /// `self += alpha * x`.
    pub fn axpy(&mut self, alpha: f64, x: &ParamVector) {
        assert_eq!(self.len(), x.len(), "axpy length mismatch");
        for (a, b) in self.0.iter_mut().zip(&x.0) {
            *a += alpha * b;
        }
    }

    /// Arithmetic mean of equal-length vectors, summed in the given order.
    pub fn mean_of<'a, I>(vectors: I) -> Result<ParamVector>
    where
        I: IntoIterator<Item = &'a ParamVector>,
    {
        let mut iter = vectors.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::invalid("mean of an empty set of vectors"))?;
        let mut acc = first.clone();
        let mut count = 1usize;
        for v in iter {
            acc.check_len(v, "mean of vectors")?;
            for (a, b) in acc.0.iter_mut().zip(&v.0) {
                *a += b;
            }
            count += 1;
        }
        let inv = 1.0 / count as f64;
        for a in acc.0.iter_mut() {
            *a *= inv;
        }
        Ok(acc)
    }

    /// Sum of equal-length vectors; `len` is used when the set is empty.
    pub fn sum_of<'a, I>(len: usize, vectors: I) -> ParamVector
    where
        I: IntoIterator<Item = &'a ParamVector>,
    {
        let mut acc = ParamVector::zeros(len);
        for v in vectors {
            acc.axpy(1.0, v);
        }
        acc
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}
