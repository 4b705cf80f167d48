use super::bank::UpdateBank;
use super::solver::{project, ProjectionResult, ProjectionStatus};
use super::{max_of, SAFETY_TOLERANCE};
use crate::error::{check_dim, Result};
use crate::metrics::SafetyMetric;
use crate::params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveSettings {
    pub growth_factor: f64,
    pub max_doublings: usize,
    pub tolerance: f64,
}

impl Default for AdaptiveSettings {
    fn default() -> Self {
        Self {
            growth_factor: 2.0,
            max_doublings: 16,
            tolerance: SAFETY_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveOutcome {
    pub result: ProjectionResult,
    /// Smoothness constants used for the accepted projection.
    pub l: Vec<f64>,
    /// Verified `g(theta + delta_star)`.
    pub g: Vec<f64>,
    pub doublings: usize,
    pub evaluations: usize,
}

/// Project, evaluate the true metric at the candidate, and grow `L` until the
/// candidate is verified safe.
///
/// Components with `L_j = 0` that fail verification are seeded with the
/// slope observed on the failed trial before growing. When the growth budget
/// is exhausted the step is zero and `g` is the reference.
pub fn adaptive_project_and_verify(
    bank: &UpdateBank,
    l0: &[f64],
    metric: &dyn SafetyMetric,
    theta: &ParamVector,
    settings: &AdaptiveSettings,
) -> Result<AdaptiveOutcome> {
    check_dim("smoothness vector", bank.k(), l0.len())?;
    check_dim("metric dimension", bank.k(), metric.dim())?;
    let m = bank.len();
    let d = theta.len();
    let mut l = l0.to_vec();
    let mut evaluations = 0;
    for doublings in 0..=settings.max_doublings {
        let result = project(bank, &l)?;
        match result.status {
            ProjectionStatus::ZeroStep | ProjectionStatus::InfeasibleFallback => {
                return Ok(AdaptiveOutcome {
                    result: ProjectionResult::zero(m, d, result.status),
                    l,
                    g: bank.reference_g().to_vec(),
                    doublings,
                    evaluations,
                });
            }
            _ => {}
        }
        // combine(e_m) reproduces the newest delta bit for bit
        let g = match (result.status, bank.newest()) {
            (ProjectionStatus::RawStepFeasible, Some(e)) => e.g.clone(),
            _ => {
                evaluations += 1;
                metric.evaluate(&(theta + &result.delta_star))?
            }
        };
        if max_of(&g) <= settings.tolerance {
            return Ok(AdaptiveOutcome {
                result,
                l,
                g,
                doublings,
                evaluations,
            });
        }
        let n2 = result.delta_star.norm_sq();
        for (j, lj) in l.iter_mut().enumerate() {
            if *lj == 0.0 && g[j] > settings.tolerance && n2 > 0.0 {
                let seed = 2.0 * (g[j] - bank.reference_g()[j]).abs() / n2;
                if seed.is_finite() {
                    *lj = seed;
                }
            }
            *lj *= settings.growth_factor;
        }
    }
    Ok(AdaptiveOutcome {
        result: ProjectionResult::zero(m, d, ProjectionStatus::ZeroStep),
        l,
        g: bank.reference_g().to_vec(),
        doublings: settings.max_doublings,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::estimate_initial_l;

    struct FnMetric<F: Fn(&ParamVector) -> Vec<f64> + Sync>(usize, F);

    impl<F: Fn(&ParamVector) -> Vec<f64> + Sync> SafetyMetric for FnMetric<F> {
        fn dim(&self) -> usize {
            self.0
        }
        fn evaluate(&self, p: &ParamVector) -> Result<Vec<f64>> {
            Ok((self.1)(p))
        }
    }

    fn bank_with(metric: &dyn SafetyMetric, theta: &ParamVector, deltas: &[Vec<f64>]) -> UpdateBank {
        let mut bank = UpdateBank::new(8, metric.evaluate(theta).unwrap()).unwrap();
        bank.push(ParamVector::zeros(theta.len()), metric.evaluate(theta).unwrap()).unwrap();
        for d in deltas {
            let d = ParamVector::new(d.clone());
            let g = metric.evaluate(&(theta + &d)).unwrap();
            bank.push(d, g).unwrap();
        }
        bank
    }

    #[test]
    fn linear_metric_accepts_first_projection() {
        // g = theta_0 - 1, raw step crosses the boundary
        let metric = FnMetric(1, |p: &ParamVector| vec![p[0] - 1.0]);
        let theta = ParamVector::new(vec![0.0, 0.0]);
        let bank = bank_with(&metric, &theta, &[vec![2.0, 1.0]]);
        let l = estimate_initial_l(&bank);
        let out = adaptive_project_and_verify(&bank, &l, &metric, &theta, &AdaptiveSettings::default()).unwrap();
        assert!(max_of(&out.g) <= SAFETY_TOLERANCE);
        assert_eq!(out.result.status, ProjectionStatus::Projected);
        assert!(out.result.delta_star.norm() > 0.0);
    }

    #[test]
    fn feasible_raw_step_reuses_bank_evaluation() {
        let metric = FnMetric(1, |p: &ParamVector| vec![p[0] - 10.0]);
        let theta = ParamVector::new(vec![0.0]);
        let bank = bank_with(&metric, &theta, &[vec![1.0]]);
        let l = estimate_initial_l(&bank);
        let out = adaptive_project_and_verify(&bank, &l, &metric, &theta, &AdaptiveSettings::default()).unwrap();
        assert_eq!(out.result.status, ProjectionStatus::RawStepFeasible);
        assert_eq!(out.evaluations, 0);
        assert_eq!(out.g, vec![-9.0]);
    }

    #[test]
    fn curvature_hidden_from_the_bank_forces_growth() {
        // a narrow bump between the sampled points that the initial
        // estimate cannot see; verification must raise L until safe
        let metric = FnMetric(1, |p: &ParamVector| {
            let x = p[0];
            vec![x - 0.5 + 2.0 * (-((x - 0.22) / 0.05).powi(2)).exp()]
        });
        let theta = ParamVector::new(vec![0.0]);
        let bank = bank_with(&metric, &theta, &[vec![1.0]]);
        let l = estimate_initial_l(&bank);
        let out = adaptive_project_and_verify(&bank, &l, &metric, &theta, &AdaptiveSettings::default()).unwrap();
        assert!(max_of(&out.g) <= SAFETY_TOLERANCE);
        assert!(out.doublings >= 1, "{out:?}");
        assert!(out.l[0] > l[0]);
    }

    #[test]
    fn exhausted_budget_returns_zero_step() {
        let metric = FnMetric(1, |p: &ParamVector| vec![if p[0] != 0.0 { 1.0 } else { -1.0 }]);
        let theta = ParamVector::new(vec![0.0]);
        let bank = bank_with(&metric, &theta, &[vec![1.0]]);
        let settings = AdaptiveSettings {
            max_doublings: 3,
            ..Default::default()
        };
        let out = adaptive_project_and_verify(&bank, &[0.0], &metric, &theta, &settings).unwrap();
        assert_eq!(out.result.status, ProjectionStatus::ZeroStep);
        assert!(out.result.delta_star.is_zero());
        assert_eq!(out.g, vec![-1.0]);
    }
}
