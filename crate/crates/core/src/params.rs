//! Flat parameter vectors.

use std::ops::{Add, Index, Sub};

use serde::{Deserialize, Serialize};

/// All trainable parameters of a network laid out as one real vector.
///
/// Arithmetic between two vectors requires equal length and panics otherwise;
/// lengths are fixed by the [`NetSpec`](crate::net::NetSpec) that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
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

    pub fn dot(&self, other: &ParamVector) -> f64 {
        assert_eq!(self.len(), other.len(), "parameter length mismatch");
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &ParamVector) {
        assert_eq!(self.len(), x.len(), "parameter length mismatch");
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += alpha * v;
        }
    }

    pub fn scaled(&self, s: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|v| v * s).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Add for &ParamVector {
    type Output = ParamVector;

    fn add(self, rhs: &ParamVector) -> ParamVector {
        assert_eq!(self.len(), rhs.len(), "parameter length mismatch");
        ParamVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &ParamVector {
    type Output = ParamVector;

    fn sub(self, rhs: &ParamVector) -> ParamVector {
        assert_eq!(self.len(), rhs.len(), "parameter length mismatch");
        ParamVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn arithmetic_preserves_length() {
        let a = ParamVector::new(vec![1.0, 2.0, 3.0]);
        let b = ParamVector::new(vec![0.5, -1.0, 4.0]);
        assert_eq!((&a + &b).len(), 3);
        assert_eq!((&a - &b).len(), 3);
        assert_eq!(a.scaled(2.0).len(), 3);
        assert_eq!(a.dot(&b), 0.5 - 2.0 + 12.0);
        assert_eq!(ParamVector::new(vec![3.0, 4.0]).norm(), 5.0);
    }

    #[test]
    #[should_panic(expected = "length mismatch")]
    fn mismatched_lengths_panic() {
        let _ = &ParamVector::zeros(2) + &ParamVector::zeros(3);
    }

    proptest! {
        #[test]
        fn axpy_matches_add(xs in prop::collection::vec(-1e3f64..1e3, 1..32), s in -4.0f64..4.0) {
            let a = ParamVector::new(xs.clone());
            let mut b = a.clone();
            b.axpy(s, &a);
            let expected: Vec<f64> = xs.iter().map(|v| v + s * v).collect();
            prop_assert_eq!(b.as_slice(), expected.as_slice());
        }
    }
}
