use nalgebra::{DMatrix, DVector};

use super::bank::UpdateBank;
use super::{max_of, SAFETY_TOLERANCE};
use crate::error::{check_dim, Result, ScpoError};

/// The sampled projection program in coefficient space.
///
/// Columns whose safety value is not finite, or whose delta is zero, are
/// marked inactive and pinned to `c_i = 0`: the former carry no usable
/// information and the latter cannot move the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionProblem {
    /// `S = D^T D`, m x m.
    pub s: DMatrix<f64>,
    pub diag_s: DVector<f64>,
    /// Bank safety values, k x m.
    pub g: DMatrix<f64>,
    pub g_ref: DVector<f64>,
    pub l: DVector<f64>,
    pub active: Vec<bool>,
}

/// Assemble the projection program from the bank and smoothness constants.
pub fn build_problem(bank: &UpdateBank, l: &[f64]) -> Result<ProjectionProblem> {
    if bank.is_empty() {
        return Err(ScpoError::Config("update bank is empty".into()));
    }
    let gram = bank.gram();
    let (k, m) = (bank.k(), bank.len());
    let mut g = DMatrix::zeros(k, m);
    for (i, e) in bank.entries().enumerate() {
        for (j, v) in e.g.iter().enumerate() {
            g[(j, i)] = *v;
        }
    }
    ProjectionProblem::new(gram.s, g, bank.reference_g().to_vec(), l.to_vec())
}

impl ProjectionProblem {
    pub fn new(s: DMatrix<f64>, g: DMatrix<f64>, g_ref: Vec<f64>, l: Vec<f64>) -> Result<Self> {
        let m = s.nrows();
        if m == 0 {
            return Err(ScpoError::Config("projection needs at least one bank column".into()));
        }
        check_dim("Gram matrix columns", m, s.ncols())?;
        check_dim("safety matrix columns", m, g.ncols())?;
        check_dim("safety matrix rows", g_ref.len(), g.nrows())?;
        check_dim("smoothness vector", g_ref.len(), l.len())?;
        if s.iter().any(|v| !v.is_finite()) || s != s.transpose() {
            return Err(ScpoError::Config("Gram matrix must be finite and symmetric".into()));
        }
        if l.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ScpoError::Config("smoothness constants must be finite and >= 0".into()));
        }
        let worst = max_of(&g_ref);
        if !(worst <= SAFETY_TOLERANCE) {
            return Err(ScpoError::UnsafeReference { max_g: worst });
        }
        let diag_s = s.diagonal();
        let active = (0..m)
            .map(|i| diag_s[i] > 0.0 && g.column(i).iter().all(|v| v.is_finite()))
            .collect();
        Ok(Self {
            s,
            diag_s,
            g,
            g_ref: DVector::from_vec(g_ref),
            l: DVector::from_vec(l),
            active,
        })
    }

    pub fn m(&self) -> usize {
        self.s.nrows()
    }

    pub fn k(&self) -> usize {
        self.g_ref.len()
    }

    pub fn e_m(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.m()];
        e[self.m() - 1] = 1.0;
        e
    }

    /// `(c - e_m)^T S (c - e_m)`, i.e. `||D c - d_raw||^2`.
    pub fn objective(&self, c: &[f64]) -> f64 {
        let mut r = DVector::from_column_slice(c);
        r[self.m() - 1] -= 1.0;
        (r.transpose() * &self.s * &r)[(0, 0)]
    }

    /// Left-hand side of every constraint at `c`. Inactive columns must have
    /// a zero coefficient; any other value yields `+inf`.
    pub fn constraint_values(&self, c: &[f64]) -> Vec<f64> {
        assert_eq!(c.len(), self.m(), "coefficient length mismatch");
        if c.iter().zip(&self.active).any(|(ci, a)| !a && *ci != 0.0) {
            return vec![f64::INFINITY; self.k()];
        }
        let cv = DVector::from_column_slice(c);
        let quad = (cv.transpose() * &self.s * &cv)[(0, 0)];
        let abs_diag: f64 = c.iter().zip(self.diag_s.iter()).map(|(ci, d)| ci.abs() * d).sum();
        let sum_c: f64 = c.iter().sum();
        (0..self.k())
            .map(|j| {
                let gc: f64 = (0..self.m())
                    .filter(|&i| self.active[i])
                    .map(|i| self.g[(j, i)] * c[i])
                    .sum();
                (1.0 - sum_c) * self.g_ref[j] + gc + 0.5 * (quad + abs_diag) * self.l[j]
            })
            .collect()
    }

    pub fn max_violation(&self, c: &[f64]) -> f64 {
        max_of(&self.constraint_values(c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamVector;

    #[test]
    fn single_zero_entry_reduces_to_reference() {
        let mut bank = UpdateBank::new(4, vec![-0.3, -1.0]).unwrap();
        bank.push(ParamVector::zeros(3), vec![-0.3, -1.0]).unwrap();
        let p = build_problem(&bank, &[2.0, 5.0]).unwrap();
        assert_eq!(p.s, DMatrix::zeros(1, 1));
        assert_eq!(p.active, vec![false]);
        assert_eq!(p.constraint_values(&[0.0]), vec![-0.3, -1.0]);
    }

    #[test]
    fn zero_coefficients_reproduce_reference_exactly() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g = DMatrix::from_row_slice(1, 2, &[0.4, -0.2]);
        let p = ProjectionProblem::new(s, g, vec![-0.7], vec![3.0]).unwrap();
        assert_eq!(p.constraint_values(&[0.0, 0.0]), vec![-0.7]);
    }

    #[test]
    fn rejects_unsafe_reference() {
        let s = DMatrix::from_row_slice(1, 1, &[1.0]);
        let g = DMatrix::from_row_slice(1, 1, &[0.0]);
        assert!(matches!(
            ProjectionProblem::new(s, g, vec![0.1], vec![1.0]),
            Err(ScpoError::UnsafeReference { .. })
        ));
    }

    #[test]
    fn non_finite_columns_are_inactive() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let g = DMatrix::from_row_slice(1, 2, &[-0.5, f64::INFINITY]);
        let p = ProjectionProblem::new(s, g, vec![-1.0], vec![1.0]).unwrap();
        assert_eq!(p.active, vec![true, false]);
        assert!(p.constraint_values(&[0.0, 0.5])[0].is_infinite());
        assert!(p.constraint_values(&[0.5, 0.0])[0].is_finite());
    }

    #[test]
    fn matches_hand_computed_constraint() {
        // m = 1, S = [[1]], G = 0.5, g_ref = -1, L = 1 at c = 0.5:
        // (1 - 0.5)(-1) + 0.25 + 0.5 (0.25 + 0.5) = -0.5 + 0.25 + 0.375
        let p = ProjectionProblem::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 0.5),
            vec![-1.0],
            vec![1.0],
        )
        .unwrap();
        assert!((p.constraint_values(&[0.5])[0] - 0.125).abs() < 1e-15);
        assert_eq!(p.objective(&[0.5]), 0.25);
    }
}
