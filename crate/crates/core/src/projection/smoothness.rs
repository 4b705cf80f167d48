use serde::{Deserialize, Serialize};

use super::bank::UpdateBank;

/// Per-component smoothness constants with their growth schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessVector {
    pub values: Vec<f64>,
    pub growth_factor: f64,
    pub max_doublings: usize,
}

impl SmoothnessVector {
    pub fn from_bank(bank: &UpdateBank, growth_factor: f64, max_doublings: usize) -> Self {
        Self {
            values: estimate_initial_l(bank),
            growth_factor,
            max_doublings,
        }
    }

    pub fn grow(&mut self) {
        for v in &mut self.values {
            *v *= self.growth_factor;
        }
    }
}

/// `L_j = max_i 2 |g_j(theta + d_i) - g_j(theta)| / ||d_i||^2`.
///
/// Zero deltas and non-finite safety values are skipped; a component with
/// no usable sample gets `L_j = 0`.
pub fn estimate_initial_l(bank: &UpdateBank) -> Vec<f64> {
    let g_ref = bank.reference_g();
    let mut l = vec![0.0; g_ref.len()];
    for e in bank.entries() {
        let n2 = e.delta.norm_sq();
        if !(n2 > 0.0) {
            continue;
        }
        for (j, (gi, gr)) in e.g.iter().zip(g_ref).enumerate() {
            let est = 2.0 * (gi - gr).abs() / n2;
            if est.is_finite() && est > l[j] {
                l[j] = est;
            }
        }
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamVector;

    #[test]
    fn single_sample() {
        let mut bank = UpdateBank::new(4, vec![-1.0]).unwrap();
        bank.push(ParamVector::zeros(2), vec![-1.0]).unwrap();
        bank.push(ParamVector::new(vec![1.0, 0.0]), vec![-0.7]).unwrap();
        let l = estimate_initial_l(&bank);
        assert!((l[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn constant_metric_gives_zero() {
        let mut bank = UpdateBank::new(4, vec![-0.5, -0.2]).unwrap();
        bank.push(ParamVector::new(vec![0.3]), vec![-0.5, -0.2]).unwrap();
        bank.push(ParamVector::new(vec![-2.0]), vec![-0.5, -0.2]).unwrap();
        assert_eq!(estimate_initial_l(&bank), vec![0.0, 0.0]);
    }

    #[test]
    fn skips_non_finite_samples() {
        let mut bank = UpdateBank::new(4, vec![-1.0]).unwrap();
        bank.push(ParamVector::new(vec![1.0]), vec![f64::INFINITY]).unwrap();
        bank.push(ParamVector::new(vec![2.0]), vec![-0.5]).unwrap();
        assert_eq!(estimate_initial_l(&bank), vec![0.25]);
    }

    #[test]
    fn quadratic_metric_recovers_true_constant() {
        // g(theta) = ||theta||^2 - 4 has gradient-Lipschitz constant 2 and a
        // stationary reference at the origin
        let g = |t: &ParamVector| t.norm_sq() - 4.0;
        let theta = ParamVector::zeros(2);
        let mut bank = UpdateBank::new(8, vec![g(&theta)]).unwrap();
        for d in [[0.1, 0.2], [-0.3, 0.05], [0.7, -0.4], [0.0, 1.0]] {
            let delta = ParamVector::new(d.to_vec());
            let gv = g(&(&theta + &delta));
            bank.push(delta, vec![gv]).unwrap();
        }
        let l = estimate_initial_l(&bank);
        assert!((l[0] - 2.0).abs() <= 1e-12, "{l:?}");
    }

    #[test]
    fn grow_doubles() {
        let mut s = SmoothnessVector {
            values: vec![0.0, 1.5],
            growth_factor: 2.0,
            max_doublings: 3,
        };
        s.grow();
        assert_eq!(s.values, vec![0.0, 3.0]);
    }
}
