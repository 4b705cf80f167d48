use rayon::prelude::*;

use super::policy::ResidualPolicy;
use super::value::{q_and_advantage_with_value, value_backup, BackupModel};
use crate::error::{check_dim, Result, ScpoError};
use crate::metrics::SafetyMetric;
use crate::net::{NetSpec, PolicyNet};
use crate::params::ParamVector;

/// `n x n` uniform grid over the state box (first coordinate outer),
/// endpoints included. Two-dimensional states only.
pub fn state_grid(lo: &[f64], hi: &[f64], n: usize) -> Vec<Vec<f64>> {
    let axis = |i: usize| crate::metrics::uniform_grid(lo[i], hi[i], n);
    let (a, b) = (axis(0), axis(1));
    a.iter().flat_map(|x1| b.iter().map(move |x2| vec![*x1, *x2])).collect()
}

/// One-step improvement metric (k = 1):
/// `g = max_x [A(x, pi_theta(x)) - (1 - mu) ||x||^2]` over grid states with
/// finite backup value, excluding the target set.
#[derive(Debug, Clone)]
pub struct ControlSafetyMetric {
    model: BackupModel,
    template: PolicyNet,
    input_scale: Vec<f64>,
    states: Vec<Vec<f64>>,
    values: Vec<f64>,
    mu: f64,
    anchored: bool,
}

impl ControlSafetyMetric {
    pub fn new(model: BackupModel, spec: NetSpec, input_scale: Vec<f64>, grid: &[Vec<f64>], mu: f64) -> Result<Self> {
        check_dim("network input", model.system.nx(), spec.input_dim)?;
        check_dim("network output", model.system.nu(), spec.output_dim)?;
        check_dim("input scale", model.system.nx(), input_scale.len())?;
        let template = PolicyNet::from_params(spec.clone(), ParamVector::zeros(spec.param_count()))?;
        let candidates: Vec<&Vec<f64>> = grid.iter().filter(|x| !model.target.contains(x)).collect();
        let values: Vec<f64> = candidates.par_iter().map(|x| value_backup(&model, x)).collect();
        let (states, values): (Vec<Vec<f64>>, Vec<f64>) = candidates
            .into_iter()
            .zip(values)
            .filter(|(_, v)| v.is_finite())
            .map(|(x, v)| (x.clone(), v))
            .unzip();
        if states.is_empty() {
            return Err(ScpoError::EmptyGrid);
        }
        Ok(Self {
            model,
            template,
            input_scale,
            states,
            values,
            mu,
            anchored: false,
        })
    }

    /// Subtract `phi_theta(0)` from the residual (see [`ResidualPolicy`]).
    pub fn with_anchored_residual(mut self, anchored: bool) -> Self {
        self.anchored = anchored;
        self
    }

    pub fn anchored(&self) -> bool {
        self.anchored
    }

    pub fn param_count(&self) -> usize {
        self.template.param_count()
    }

    pub fn input_scale(&self) -> &[f64] {
        &self.input_scale
    }

    /// Residual policy with the metric's scaling and anchoring.
    pub fn policy<'a>(&'a self, params: &'a ParamVector) -> ResidualPolicy<'a> {
        ResidualPolicy::new(
            &self.model.backup,
            self.template.view_with(params.as_slice()),
            &self.input_scale,
            &self.model.target,
            self.anchored,
        )
    }

    pub fn model(&self) -> &BackupModel {
        &self.model
    }

    /// Retained grid states.
    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    /// Backup values at the retained states.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        (1.0 - self.mu) * x.iter().map(|v| v * v).sum::<f64>()
    }

    /// Per-state `A(x, pi_theta(x)) - margin(x)`.
    pub fn pointwise(&self, params: &ParamVector) -> Result<Vec<f64>> {
        check_dim("parameter vector", self.template.param_count(), params.len())?;
        let policy = self.policy(params);
        Ok(self
            .states
            .par_iter()
            .zip(self.values.par_iter())
            .map(|(x, v)| {
                let u = policy.act(x);
                q_and_advantage_with_value(&self.model, x, &u, *v).1 - self.margin(x)
            })
            .collect())
    }
}

impl SafetyMetric for ControlSafetyMetric {
    fn dim(&self) -> usize {
        1
    }

    fn evaluate(&self, params: &ParamVector) -> Result<Vec<f64>> {
        let worst = self
            .pointwise(params)?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(vec![worst])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{LinearSystem, StageCost, TargetSet, VALUE_HORIZON};

    fn model() -> BackupModel {
        BackupModel::new(
            LinearSystem::double_integrator(0.1, 15.0, 1.0).unwrap(),
            StageCost::identity(2, 1),
            TargetSet::ball(0.01),
            VALUE_HORIZON,
        )
        .unwrap()
    }

    #[test]
    fn grid_layout() {
        let g = state_grid(&[-15.0, -15.0], &[15.0, 15.0], 50);
        assert_eq!(g.len(), 2500);
        assert_eq!(g[0], vec![-15.0, -15.0]);
        assert_eq!(g[1][0], -15.0);
        assert_eq!(g[2499], vec![15.0, 15.0]);
    }

    #[test]
    fn zero_residual_gives_minus_min_norm() {
        let spec = NetSpec::new(2, 1, 8, 2);
        let grid = state_grid(&[-15.0, -15.0], &[15.0, 15.0], 50);
        let metric = ControlSafetyMetric::new(model(), spec.clone(), vec![1.0 / 15.0; 2], &grid, 0.0).unwrap();
        assert!(metric.states().len() < 2500 && !metric.states().is_empty());
        let net = PolicyNet::init_zero_residual(spec).unwrap();
        let g = metric.evaluate(net.params()).unwrap();
        let min_norm = metric
            .states()
            .iter()
            .map(|x| x[0] * x[0] + x[1] * x[1])
            .fold(f64::INFINITY, f64::min);
        assert_eq!(g, vec![-min_norm]);
        assert!(g[0] < 0.0);
    }

    #[test]
    fn single_state_with_constant_residual() {
        let m = model();
        let xbar = vec![1.0, 0.5];
        let spec = NetSpec::new(2, 1, 4, 1);
        let metric = ControlSafetyMetric::new(m.clone(), spec.clone(), vec![1.0 / 15.0; 2], &[xbar.clone()], 0.0).unwrap();
        let mut p = ParamVector::zeros(spec.param_count());
        let bias = spec.output_layer_range().end - 1;
        p.as_mut_slice()[bias] = 0.2;
        let g = metric.evaluate(&p).unwrap()[0];
        // independent two-phase rollout: apply the shifted input, then the backup
        let u = m.system.clip_input(&[m.backup.act(&xbar)[0] + 0.2]);
        let q = m.cost.eval(&xbar, &u) + value_backup(&m, &m.system.step(&xbar, &u));
        let delta = q - value_backup(&m, &xbar);
        assert!((g - (delta - 1.25)).abs() <= 1e-12);
        // certification unfolds to Q <= V + ||x||^2
        if g <= 0.0 {
            assert!(q <= value_backup(&m, &xbar) + 1.25 + 1e-12);
        }
    }

    #[test]
    fn empty_grid_is_an_error() {
        let spec = NetSpec::new(2, 1, 4, 1);
        let grid = vec![vec![0.0, 0.0], vec![14.9, 14.9]];
        assert!(matches!(
            ControlSafetyMetric::new(model(), spec, vec![1.0; 2], &grid, 0.0),
            Err(ScpoError::EmptyGrid)
        ));
    }
}
