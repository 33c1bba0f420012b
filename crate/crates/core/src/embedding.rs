//! Dense vectors in the joint image-text space and the handful of
//! linear-algebra helpers the engine needs.

use std::ops::{Add, Index, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fixed-dimension real vector. Entries are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Wraps `values`, rejecting non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "embedding entry {pos} is not finite ({})",
                values[pos]
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(dimension: usize) -> Self {
        Self(vec![0.0; dimension])
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn check_dimension(&self, expected: usize) -> Result<()> {
        if self.0.len() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                found: self.0.len(),
            })
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }

    /// In-place `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Self, factor: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += factor * b;
        }
    }

    /// Unit-length copy, or `None` for the zero vector.
    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm();
        (n > 0.0).then(|| Self(self.0.iter().map(|v| v / n).collect()))
    }

    /// Cosine similarity; `None` when either side has zero norm.
    pub fn cosine(&self, other: &Self) -> Option<f64> {
        cosine(&self.0, &other.0)
    }
}

impl Index<usize> for EmbeddingVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Add for &EmbeddingVector {
    type Output = EmbeddingVector;

    fn add(self, rhs: Self) -> EmbeddingVector {
        debug_assert_eq!(self.0.len(), rhs.0.len());
        EmbeddingVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &EmbeddingVector {
    type Output = EmbeddingVector;

    fn sub(self, rhs: Self) -> EmbeddingVector {
        debug_assert_eq!(self.0.len(), rhs.0.len());
        EmbeddingVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity clamped to [-1, 1]; `None` for zero-norm inputs.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let denom = norm(a) * norm(b);
    if denom == 0.0 || !denom.is_finite() {
        return None;
    }
    Some((dot(a, b) / denom).clamp(-1.0, 1.0))
}
