use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result, ScpoError};
use crate::params::ParamVector;

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    pub delta: ParamVector,
    /// `g(theta_ref + delta)`
    pub g: Vec<f64>,
}

/// Bounded FIFO of candidate updates relative to the current reference
/// parameters, together with their safety evaluations.
///
/// The newest entry is always the latest raw gradient step.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateBank {
    capacity: usize,
    entries: VecDeque<BankEntry>,
    reference_g: Vec<f64>,
}

/// Gram matrix of the bank deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct GramData {
    pub s: DMatrix<f64>,
    pub diag_s: DVector<f64>,
    pub e_m: DVector<f64>,
}

impl UpdateBank {
    pub fn new(capacity: usize, reference_g: Vec<f64>) -> Result<Self> {
        if capacity == 0 {
            return Err(ScpoError::Config("bank capacity m must be positive".into()));
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity + 1),
            reference_g,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Metric dimension k.
    pub fn k(&self) -> usize {
        self.reference_g.len()
    }

    /// Parameter dimension d, if any entry is present.
    pub fn d(&self) -> Option<usize> {
        self.entries.front().map(|e| e.delta.len())
    }

    pub fn reference_g(&self) -> &[f64] {
        &self.reference_g
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = &BankEntry> + '_ {
        self.entries.iter()
    }

    pub fn newest(&self) -> Option<&BankEntry> {
        self.entries.back()
    }

    /// Append an entry, evicting and returning the oldest one when full.
    pub fn push(&mut self, delta: ParamVector, g: Vec<f64>) -> Result<Option<BankEntry>> {
        check_dim("bank safety values", self.k(), g.len())?;
        if let Some(d) = self.d() {
            check_dim("bank delta", d, delta.len())?;
        }
        self.entries.push_back(BankEntry { delta, g });
        Ok(if self.entries.len() > self.capacity {
            self.entries.pop_front()
        } else {
            None
        })
    }

    pub fn gram(&self) -> GramData {
        let m = self.entries.len();
        let mut s = DMatrix::zeros(m, m);
        for (i, a) in self.entries.iter().enumerate() {
            for (j, b) in self.entries.iter().enumerate().skip(i) {
                let v = a.delta.dot(&b.delta);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        let diag_s = s.diagonal();
        let mut e_m = DVector::zeros(m);
        if m > 0 {
            e_m[m - 1] = 1.0;
        }
        GramData { s, diag_s, e_m }
    }

    /// `D c`
    pub fn combine(&self, c: &[f64]) -> Result<ParamVector> {
        check_dim("bank coefficients", self.entries.len(), c.len())?;
        let d = self.d().unwrap_or(0);
        let mut out = ParamVector::zeros(d);
        for (e, &ci) in self.entries.iter().zip(c) {
            if ci != 0.0 {
                out.axpy(ci, &e.delta);
            }
        }
        Ok(out)
    }

    /// Re-express every delta relative to `theta + applied` and adopt the
    /// verified safety values there as the new reference.
    pub fn recenter(&mut self, applied: &ParamVector, reference_g: Vec<f64>) -> Result<()> {
        check_dim("reference safety values", self.k(), reference_g.len())?;
        if let Some(d) = self.d() {
            check_dim("applied step", d, applied.len())?;
        }
        if !applied.is_zero() {
            for e in &mut self.entries {
                e.delta.axpy(-1.0, applied);
            }
        }
        self.reference_g = reference_g;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec())
    }

    #[test]
    fn zero_capacity_is_rejected() {
        assert!(UpdateBank::new(0, vec![-1.0]).is_err());
    }

    #[test]
    fn evicts_oldest_first() {
        let mut bank = UpdateBank::new(3, vec![-1.0]).unwrap();
        for i in 0..5 {
            let evicted = bank.push(pv(&[i as f64]), vec![-(i as f64)]).unwrap();
            if i >= 3 {
                assert_eq!(evicted.unwrap().delta, pv(&[(i - 3) as f64]));
            } else {
                assert!(evicted.is_none());
            }
        }
        let order: Vec<f64> = bank.entries().map(|e| e.delta[0]).collect();
        assert_eq!(order, vec![2.0, 3.0, 4.0]);
        assert_eq!(bank.newest().unwrap().delta, pv(&[4.0]));
    }

    #[test]
    fn rejects_mismatched_dimensions() {
        let mut bank = UpdateBank::new(2, vec![-1.0, -1.0]).unwrap();
        assert!(bank.push(pv(&[1.0]), vec![0.0]).is_err());
        bank.push(pv(&[1.0, 2.0]), vec![0.0, 0.0]).unwrap();
        assert!(bank.push(pv(&[1.0]), vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn orthogonal_deltas_give_diagonal_gram() {
        let mut bank = UpdateBank::new(2, vec![-1.0]).unwrap();
        bank.push(pv(&[1.0, 0.0]), vec![-1.0]).unwrap();
        bank.push(pv(&[0.0, 2.0]), vec![-1.0]).unwrap();
        let gram = bank.gram();
        assert_eq!(gram.s, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]));
        assert_eq!(gram.diag_s.as_slice(), &[1.0, 4.0]);
        assert_eq!(gram.e_m.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn recenter_by_zero_is_identity() {
        let mut bank = UpdateBank::new(2, vec![-1.0]).unwrap();
        bank.push(pv(&[1.0, 3.0]), vec![-0.5]).unwrap();
        let before = bank.clone();
        bank.recenter(&pv(&[0.0, 0.0]), vec![-1.0]).unwrap();
        assert_eq!(bank, before);
    }

    #[test]
    fn recenter_onto_entry_zeroes_it() {
        let mut bank = UpdateBank::new(2, vec![-1.0]).unwrap();
        bank.push(pv(&[1.0, 3.0]), vec![-0.5]).unwrap();
        bank.recenter(&pv(&[1.0, 3.0]), vec![-0.5]).unwrap();
        let e = bank.newest().unwrap();
        assert!(e.delta.is_zero());
        assert_eq!(e.g, vec![-0.5]);
        assert_eq!(bank.reference_g(), &[-0.5]);
    }

    proptest! {
        #[test]
        fn gram_is_symmetric_psd(cols in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 6), 1..6)) {
            let mut bank = UpdateBank::new(8, vec![-1.0]).unwrap();
            for c in &cols {
                bank.push(pv(c), vec![-1.0]).unwrap();
            }
            let gram = bank.gram();
            prop_assert_eq!(&gram.s, &gram.s.transpose());
            let eig = gram.s.clone().symmetric_eigen();
            for ev in eig.eigenvalues.iter() {
                prop_assert!(*ev >= -1e-10 * (1.0 + gram.s.amax()));
            }
            for (i, d) in gram.diag_s.iter().enumerate() {
                prop_assert!(*d >= 0.0);
                prop_assert_eq!(*d, gram.s[(i, i)]);
            }
        }

        #[test]
        fn never_exceeds_capacity(cap in 1usize..6, n in 0usize..20) {
            let mut bank = UpdateBank::new(cap, vec![0.0]).unwrap();
            for i in 0..n {
                bank.push(pv(&[i as f64]), vec![0.0]).unwrap();
                prop_assert!(bank.len() <= cap);
            }
            let first = n.saturating_sub(cap);
            let order: Vec<f64> = bank.entries().map(|e| e.delta[0]).collect();
            let expected: Vec<f64> = (first..n).map(|i| i as f64).collect();
            prop_assert_eq!(order, expected);
        }
    }
}
