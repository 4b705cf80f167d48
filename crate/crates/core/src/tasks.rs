//! Training tasks: batch sampling, losses, and the policy each task trains.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::control::{
    rollout, value_backup, BackupModel, ControlSafetyMetric, ExpertPolicy, ResidualPolicy,
};
use crate::error::{check_dim, Result, ScpoError};
use crate::metrics::{GridBoundMetric, SafetyMetric};
use crate::net::{LossKind, NetSpec, PolicyNet};
use crate::params::ParamVector;

/// A supervised objective over a frozen per-epoch batch.
pub trait Task: Sync {
    type Batch: Sync;

    fn spec(&self) -> &NetSpec;

    fn metric(&self) -> &dyn SafetyMetric;

    /// Draw the batch for the current iterate.
    fn sample_batch(&self, params: &ParamVector, rng: &mut ChaCha8Rng) -> Result<Self::Batch>;

    fn loss(&self, params: &ParamVector, batch: &Self::Batch) -> Result<f64>;

    fn loss_and_grad(&self, params: &ParamVector, batch: &Self::Batch) -> Result<(f64, ParamVector)>;

    /// `lambda * 1^T max(g, 0)` and a subgradient, for the soft-penalty
    /// baseline. Tasks without a differentiable metric return an error.
    fn penalty_and_grad(&self, _params: &ParamVector, _lambda: f64) -> Result<(f64, ParamVector)> {
        Err(ScpoError::Config("soft-penalty mode is not available for this task".into()))
    }
}

pub fn regression_target(x: f64) -> f64 {
    x.sin() + (3.0 * x).sin() + (7.0 * x).sin()
}

/// Fit `f(x) = sin x + sin 3x + sin 7x` subject to `|pi(v_j)| <= bound` on a
/// grid; the backup policy is identically zero so `pi_theta = phi_theta`.
pub struct RegressionTask {
    template: PolicyNet,
    metric: GridBoundMetric,
    batch_size: usize,
}

pub type RegressionBatch = Vec<(Vec<f64>, Vec<f64>)>;

impl RegressionTask {
    pub fn new(spec: NetSpec, batch_size: usize, grid: Vec<f64>, bound: f64) -> Result<Self> {
        if batch_size == 0 {
            return Err(ScpoError::Config("batch_size must be positive".into()));
        }
        let template = PolicyNet::from_params(spec.clone(), ParamVector::zeros(spec.param_count()))?;
        let metric = GridBoundMetric::for_network(spec, grid, bound)?;
        Ok(Self {
            template,
            metric,
            batch_size,
        })
    }

    pub fn grid_metric(&self) -> &GridBoundMetric {
        &self.metric
    }

    pub fn policy(&self, params: &ParamVector, x: f64) -> Result<f64> {
        check_dim("parameter vector", self.template.param_count(), params.len())?;
        Ok(self.template.view_with(params.as_slice()).forward(&[x])?[0])
    }

    fn net(&self, params: &ParamVector) -> Result<PolicyNet> {
        PolicyNet::from_params(self.template.spec().clone(), params.clone())
    }
}

impl Task for RegressionTask {
    type Batch = RegressionBatch;

    fn spec(&self) -> &NetSpec {
        self.template.spec()
    }

    fn metric(&self) -> &dyn SafetyMetric {
        &self.metric
    }

    fn sample_batch(&self, _params: &ParamVector, rng: &mut ChaCha8Rng) -> Result<RegressionBatch> {
        Ok((0..self.batch_size)
            .map(|_| {
                let x: f64 = StandardNormal.sample(rng);
                (vec![x], vec![regression_target(x)])
            })
            .collect())
    }

    fn loss(&self, params: &ParamVector, batch: &RegressionBatch) -> Result<f64> {
        self.net(params)?.loss(batch, LossKind::MeanSquaredError)
    }

    fn loss_and_grad(&self, params: &ParamVector, batch: &RegressionBatch) -> Result<(f64, ParamVector)> {
        self.net(params)?.loss_and_grad(batch, LossKind::MeanSquaredError)
    }

    fn penalty_and_grad(&self, params: &ParamVector, lambda: f64) -> Result<(f64, ParamVector)> {
        check_dim("parameter vector", self.template.param_count(), params.len())?;
        let bound = self.metric.bound();
        let inputs: Vec<Vec<f64>> = self.metric.grid().iter().map(|v| vec![*v]).collect();
        self.template
            .view_with(params.as_slice())
            .backprop_sum(&inputs, |_, y| {
                let over = y[0].abs() - bound;
                if over > 0.0 {
                    (lambda * over, vec![lambda * y[0].signum()])
                } else {
                    (0.0, vec![0.0])
                }
            })
    }
}

/// Settings for the imitation task on a linear system.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTaskSettings {
    pub rollouts_per_epoch: usize,
    pub rollout_horizon: usize,
    pub max_resample_retries: usize,
}

/// Imitate a (possibly unsafe) expert with `pi_theta = clip(pi_safe + phi)`
/// on states visited by the current policy.
pub struct ControlTask {
    template: PolicyNet,
    metric: ControlSafetyMetric,
    expert: ExpertPolicy,
    settings: ControlTaskSettings,
}

/// Visited states with their expert labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBatch {
    pub states: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub retained_rollouts: usize,
    pub attempts: usize,
}

impl ControlTask {
    pub fn new(
        spec: NetSpec,
        metric: ControlSafetyMetric,
        expert: ExpertPolicy,
        settings: ControlTaskSettings,
    ) -> Result<Self> {
        if spec.output_dim != 1 {
            return Err(ScpoError::Config("control task supports a single input channel".into()));
        }
        check_dim("network parameters", metric.param_count(), spec.param_count())?;
        if settings.rollouts_per_epoch == 0 || settings.rollout_horizon == 0 {
            return Err(ScpoError::Config("rollouts_per_epoch and rollout_horizon must be positive".into()));
        }
        let template = PolicyNet::from_params(spec.clone(), ParamVector::zeros(spec.param_count()))?;
        Ok(Self {
            template,
            metric,
            expert,
            settings,
        })
    }

    pub fn model(&self) -> &BackupModel {
        self.metric.model()
    }

    pub fn safety_metric(&self) -> &ControlSafetyMetric {
        &self.metric
    }

    pub fn expert(&self) -> &ExpertPolicy {
        &self.expert
    }

    pub fn input_scale(&self) -> &[f64] {
        self.metric.input_scale()
    }

    pub fn policy<'a>(&'a self, params: &'a ParamVector) -> ResidualPolicy<'a> {
        self.metric.policy(params)
    }

    fn sample_initial_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let sys = &self.model().system;
        sys.state_lo
            .iter()
            .zip(&sys.state_hi)
            .map(|(lo, hi)| rng.random_range(*lo..*hi))
            .collect()
    }
}

impl Task for ControlTask {
    type Batch = ControlBatch;

    fn spec(&self) -> &NetSpec {
        self.template.spec()
    }

    fn metric(&self) -> &dyn SafetyMetric {
        &self.metric
    }

    /// Roll out `pi_theta` from uniform initial states and keep the visited
    /// states of rollouts whose endpoint has a finite backup value.
    fn sample_batch(&self, params: &ParamVector, rng: &mut ChaCha8Rng) -> Result<ControlBatch> {
        check_dim("parameter vector", self.template.param_count(), params.len())?;
        let model = self.model();
        let policy = self.policy(params);
        for attempt in 1..=self.settings.max_resample_retries.max(1) {
            let starts: Vec<Vec<f64>> = (0..self.settings.rollouts_per_epoch)
                .map(|_| self.sample_initial_state(rng))
                .collect();
            let kept: Vec<Vec<Vec<f64>>> = starts
                .par_iter()
                .map(|x0| {
                    let tr = rollout(&model.system, &model.cost, |x| policy.act(x), x0, self.settings.rollout_horizon, &model.target);
                    if tr.feasible && value_backup(model, tr.last_state()).is_finite() {
                        let n = tr.inputs.len();
                        tr.states.into_iter().take(n).collect()
                    } else {
                        Vec::new()
                    }
                })
                .collect();
            let retained_rollouts = kept.iter().filter(|s| !s.is_empty()).count();
            let states: Vec<Vec<f64>> = kept.into_iter().flatten().collect();
            if states.is_empty() {
                continue;
            }
            let labels = states.iter().map(|x| self.expert.act(x, rng)).collect();
            return Ok(ControlBatch {
                states,
                labels,
                retained_rollouts,
                attempts: attempt,
            });
        }
        Err(ScpoError::EmptyControlBatch {
            retries: self.settings.max_resample_retries.max(1),
        })
    }

    fn loss(&self, params: &ParamVector, batch: &ControlBatch) -> Result<f64> {
        if batch.states.is_empty() {
            return Err(ScpoError::EmptyBatch);
        }
        check_dim("parameter vector", self.template.param_count(), params.len())?;
        let policy = self.policy(params);
        let sum: f64 = batch
            .states
            .iter()
            .zip(&batch.labels)
            .map(|(x, y)| (policy.act(x)[0] - y).powi(2))
            .sum();
        Ok(sum / batch.states.len() as f64)
    }

    fn loss_and_grad(&self, params: &ParamVector, batch: &ControlBatch) -> Result<(f64, ParamVector)> {
        if batch.states.is_empty() {
            return Err(ScpoError::EmptyBatch);
        }
        check_dim("parameter vector", self.template.param_count(), params.len())?;
        let policy = self.policy(params);
        let n = batch.states.len() as f64;
        // phi only enters through the unsaturated branch outside the target
        let inputs: Vec<Vec<f64>> = batch.states.iter().map(|x| policy.scaled_input(x)).collect();
        let residuals: Vec<(f64, f64)> = batch
            .states
            .iter()
            .zip(&batch.labels)
            .map(|(x, y)| {
                let a = policy.act_with_slope(x);
                (a.u[0] - y, a.slope[0])
            })
            .collect();
        let (sum, mut grad) = policy.net.backprop_sum(&inputs, |i, _| {
            let (r, slope) = residuals[i];
            (r * r, vec![2.0 * r * slope])
        })?;
        if self.metric.anchored() {
            // the anchor phi(0) enters every unsaturated action with sign -1
            let w: f64 = residuals.iter().map(|(r, slope)| 2.0 * r * slope).sum();
            let origin = vec![vec![0.0; inputs.first().map_or(0, Vec::len)]];
            let (_, g0) = policy.net.backprop_sum(&origin, |_, _| (0.0, vec![-w]))?;
            grad.axpy(1.0, &g0);
        }
        for v in grad.as_mut_slice() {
            *v /= n;
        }
        Ok((sum / n, grad))
    }
}
