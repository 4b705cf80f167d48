//! The constrained training loop and the soft-penalty baseline.

use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Result, ScpoError};
use crate::metrics::violation_summary;
use crate::net::PolicyNet;
use crate::params::ParamVector;
use crate::projection::{
    adaptive_project_and_verify, armijo_search, estimate_initial_l, AdaptiveSettings, ArmijoSettings,
    ProjectionStatus, UpdateBank, SAFETY_TOLERANCE,
};
use crate::tasks::Task;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TrainMode {
    Scpo,
    SoftPenalty { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub eta: f64,
    pub bank_capacity: usize,
    pub armijo: ArmijoSettings,
    pub adaptive: AdaptiveSettings,
    pub epochs: usize,
    pub seed: u64,
    pub mode: TrainMode,
}

impl TrainerConfig {
    pub fn new(eta: f64, epochs: usize, seed: u64) -> Self {
        Self {
            eta,
            bank_capacity: 8,
            armijo: ArmijoSettings::default(),
            adaptive: AdaptiveSettings::default(),
            epochs,
            seed,
            mode: TrainMode::Scpo,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(ScpoError::Config(format!("{field} {why}")));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta", "must be positive");
        }
        if self.bank_capacity == 0 {
            return bad("m (bank_capacity)", "must be positive");
        }
        if !(self.armijo.sigma > 0.0 && self.armijo.sigma < 1.0) {
            return bad("sigma", "must lie in (0, 1)");
        }
        if !(self.armijo.shrink > 0.0 && self.armijo.shrink < 1.0) {
            return bad("shrink", "must lie in (0, 1)");
        }
        if !(self.adaptive.growth_factor > 1.0) {
            return bad("growth_factor", "must exceed 1");
        }
        if let TrainMode::SoftPenalty { lambda } = self.mode {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return bad("penalty_lambda", "must be finite and >= 0");
            }
        }
        Ok(())
    }
}

/// Per-epoch RNG: the seed with stream `epoch + 1` (stream 0 is left to
/// callers for anything drawn before training).
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepStatus {
    RawStepFeasible,
    Projected,
    ZeroStep,
    InfeasibleFallback,
    /// Post-step verification failed and the iterate was restored.
    RolledBack,
    /// Baseline step without projection.
    Unconstrained,
}

impl From<ProjectionStatus> for StepStatus {
    fn from(s: ProjectionStatus) -> Self {
        match s {
            ProjectionStatus::RawStepFeasible => StepStatus::RawStepFeasible,
            ProjectionStatus::Projected => StepStatus::Projected,
            ProjectionStatus::ZeroStep => StepStatus::ZeroStep,
            ProjectionStatus::InfeasibleFallback => StepStatus::InfeasibleFallback,
        }
    }
}

impl StepStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            StepStatus::RawStepFeasible => "raw-step-feasible",
            StepStatus::Projected => "projected",
            StepStatus::ZeroStep => "zero-step",
            StepStatus::InfeasibleFallback => "infeasible-fallback",
            StepStatus::RolledBack => "rolled-back",
            StepStatus::Unconstrained => "unconstrained",
        }
    }
}

impl fmt::Display for StepStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One row of the training log. `loss` is on the epoch's frozen batch at the
/// start of the epoch; every safety field describes the iterate after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub loss_after: f64,
    /// `||g||_1 / k`
    pub violation_l1: f64,
    /// `||max(g, 0)||_1 / k`
    pub violation_pos: f64,
    pub max_g: f64,
    pub alpha: f64,
    pub status: StepStatus,
    /// `||delta*||` before line search.
    pub step_norm: f64,
    /// `-grad^T delta*`
    pub descent_lhs: f64,
    pub l_vector: Vec<f64>,
    pub doublings: usize,
    pub backtracks: usize,
    pub batch_size: usize,
    pub wall_ms: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: [&'static str; 15] = [
        "epoch",
        "loss",
        "loss_after",
        "violation_l1",
        "violation_pos",
        "max_g",
        "alpha",
        "status",
        "step_norm",
        "descent_lhs",
        "l_vector",
        "doublings",
        "backtracks",
        "batch_size",
        "wall_ms",
    ];

    pub fn csv_row(&self) -> Vec<String> {
        let l = self.l_vector.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";");
        vec![
            self.epoch.to_string(),
            self.loss.to_string(),
            self.loss_after.to_string(),
            self.violation_l1.to_string(),
            self.violation_pos.to_string(),
            self.max_g.to_string(),
            self.alpha.to_string(),
            self.status.to_string(),
            self.step_norm.to_string(),
            self.descent_lhs.to_string(),
            l,
            self.doublings.to_string(),
            self.backtracks.to_string(),
            self.batch_size.to_string(),
            format!("{:.3}", self.wall_ms),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub initial_g: Vec<f64>,
    pub records: Vec<EpochRecord>,
}

/// Mutable training state: the iterate, its verified safety values and the
/// update bank.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub theta: ParamVector,
    pub g: Vec<f64>,
    pub bank: UpdateBank,
    pub epoch: usize,
}

impl TrainerState {
    /// Verify `g(theta_0) <= 0` and seed the bank with the zero update.
    pub fn initialize<T: Task + ?Sized>(task: &T, theta0: ParamVector, config: &TrainerConfig) -> Result<Self> {
        config.validate()?;
        let g0 = task.metric().evaluate(&theta0)?;
        let worst = g0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(worst <= SAFETY_TOLERANCE) {
            return Err(ScpoError::InitialInfeasible { max_g: worst });
        }
        let mut bank = UpdateBank::new(config.bank_capacity, g0.clone())?;
        bank.push(ParamVector::zeros(theta0.len()), g0.clone())?;
        Ok(Self {
            theta: theta0,
            g: g0,
            bank,
            epoch: 0,
        })
    }
}

fn max_g(g: &[f64]) -> f64 {
    g.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// One constrained step on a frozen batch.
///
/// On any error the state is left untouched.
pub fn scpo_step<T: Task + ?Sized>(
    task: &T,
    state: &mut TrainerState,
    batch: &T::Batch,
    batch_size: usize,
    config: &TrainerConfig,
) -> Result<EpochRecord> {
    let start = Instant::now();
    let metric = task.metric();
    let (loss, grad) = task.loss_and_grad(&state.theta, batch)?;
    let raw = grad.scaled(-config.eta);
    let g_half = metric.evaluate(&(&state.theta + &raw))?;

    let mut bank = state.bank.clone();
    bank.push(raw, g_half)?;
    let l0 = estimate_initial_l(&bank);
    let outcome = adaptive_project_and_verify(&bank, &l0, metric, &state.theta, &config.adaptive)?;
    let delta = &outcome.result.delta_star;
    let mut status = StepStatus::from(outcome.result.status);
    let descent_lhs = -grad.dot(delta);

    let (mut alpha, mut loss_after, backtracks) = if delta.is_zero() {
        (0.0, loss, 0)
    } else {
        let ls = armijo_search(|p| task.loss(p, batch), &state.theta, delta, &config.armijo)?;
        (ls.alpha, ls.loss, ls.backtracks)
    };

    let mut g_new = state.g.clone();
    let mut applied = ParamVector::zeros(state.theta.len());
    if alpha > 0.0 {
        applied = delta.scaled(alpha);
        let candidate = &state.theta + &applied;
        let g = if alpha == 1.0 {
            outcome.g.clone()
        } else {
            metric.evaluate(&candidate)?
        };
        if max_g(&g) <= config.adaptive.tolerance {
            g_new = g;
        } else {
            status = StepStatus::RolledBack;
            alpha = 0.0;
            loss_after = loss;
            applied = ParamVector::zeros(state.theta.len());
        }
    }

    bank.recenter(&applied, g_new.clone())?;
    if alpha > 0.0 {
        state.theta = &state.theta + &applied;
    }
    state.bank = bank;
    state.g = g_new;
    let summary = violation_summary(&state.g);
    let record = EpochRecord {
        epoch: state.epoch,
        loss,
        loss_after,
        violation_l1: summary.raw,
        violation_pos: summary.positive,
        max_g: max_g(&state.g),
        alpha,
        status,
        step_norm: delta.norm(),
        descent_lhs,
        l_vector: outcome.l,
        doublings: outcome.doublings,
        backtracks,
        batch_size,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    state.epoch += 1;
    Ok(record)
}

/// Plain gradient step on `loss + lambda * 1^T max(g, 0)`; no safety guarantee.
pub fn soft_penalty_step<T: Task + ?Sized>(
    task: &T,
    state: &mut TrainerState,
    batch: &T::Batch,
    batch_size: usize,
    lambda: f64,
    config: &TrainerConfig,
) -> Result<EpochRecord> {
    let start = Instant::now();
    let (loss, mut grad) = task.loss_and_grad(&state.theta, batch)?;
    if lambda != 0.0 {
        let (_, pgrad) = task.penalty_and_grad(&state.theta, lambda)?;
        grad.axpy(1.0, &pgrad);
    }
    let step = grad.scaled(-config.eta);
    let theta = &state.theta + &step;
    let g = task.metric().evaluate(&theta)?;
    let loss_after = task.loss(&theta, batch)?;
    state.theta = theta;
    state.g = g;
    let summary = violation_summary(&state.g);
    let record = EpochRecord {
        epoch: state.epoch,
        loss,
        loss_after,
        violation_l1: summary.raw,
        violation_pos: summary.positive,
        max_g: max_g(&state.g),
        alpha: 1.0,
        status: StepStatus::Unconstrained,
        step_norm: step.norm(),
        descent_lhs: -grad.dot(&step),
        l_vector: Vec::new(),
        doublings: 0,
        backtracks: 0,
        batch_size,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    state.epoch += 1;
    Ok(record)
}

/// Where and how often to write checkpoints. File `epoch-NNNN.ckpt` holds the
/// parameters after `NNNN` completed epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointPolicy {
    pub dir: PathBuf,
    pub every: usize,
    pub config_echo: Option<serde_json::Value>,
}

impl CheckpointPolicy {
    pub fn path_for(&self, completed: usize) -> PathBuf {
        self.dir.join(format!("epoch-{completed:04}.ckpt"))
    }
}

/// Number of samples in a batch, for logging.
pub trait BatchLen {
    fn batch_len(&self) -> usize;
}

impl<T> BatchLen for Vec<T> {
    fn batch_len(&self) -> usize {
        self.len()
    }
}

impl BatchLen for crate::tasks::ControlBatch {
    fn batch_len(&self) -> usize {
        self.states.len()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: PolicyNet,
    pub log: TrainLog,
}

/// Run the configured number of epochs from `net`'s parameters.
pub fn train<T>(
    task: &T,
    net: PolicyNet,
    config: &TrainerConfig,
    checkpoints: Option<&CheckpointPolicy>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome>
where
    T: Task + ?Sized,
    T::Batch: BatchLen,
{
    let mut state = TrainerState::initialize(task, net.params().clone(), config)?;
    let mut log = TrainLog {
        initial_g: state.g.clone(),
        records: Vec::with_capacity(config.epochs),
    };
    let save = |state: &TrainerState, completed: usize| -> Result<()> {
        if let Some(cp) = checkpoints {
            std::fs::create_dir_all(&cp.dir)?;
            let snapshot = PolicyNet::from_params(net.spec().clone(), state.theta.clone())?;
            Checkpoint::from_net(&snapshot, Some(completed as u64), cp.config_echo.clone()).save(cp.path_for(completed))?;
        }
        Ok(())
    };
    save(&state, 0)?;
    for epoch in 0..config.epochs {
        let mut rng = epoch_rng(config.seed, epoch);
        let batch = task.sample_batch(&state.theta, &mut rng)?;
        let n = batch.batch_len();
        let record = match config.mode {
            TrainMode::Scpo => scpo_step(task, &mut state, &batch, n, config)?,
            TrainMode::SoftPenalty { lambda } => soft_penalty_step(task, &mut state, &batch, n, lambda, config)?,
        };
        on_epoch(&record);
        log.records.push(record);
        let completed = epoch + 1;
        if let Some(cp) = checkpoints {
            if completed % cp.every.max(1) == 0 || completed == config.epochs {
                save(&state, completed)?;
            }
        }
    }
    let mut net = net;
    net.set_params(state.theta)?;
    Ok(TrainOutcome { net, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::uniform_grid;
    use crate::net::NetSpec;
    use crate::tasks::RegressionTask;

    fn task() -> RegressionTask {
        RegressionTask::new(NetSpec::new(1, 1, 16, 2).with_seed(2), 64, uniform_grid(-3.0, 3.0, 64), 1.4).unwrap()
    }

    #[test]
    fn zero_epochs_returns_initial_parameters() {
        let t = task();
        let net = PolicyNet::init_zero_residual(t.spec().clone()).unwrap();
        let out = train(&t, net.clone(), &TrainerConfig::new(0.01, 0, 0), None, |_| {}).unwrap();
        assert_eq!(out.net, net);
        assert!(out.log.records.is_empty());
        assert_eq!(out.log.initial_g, vec![-1.4; 64]);
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let t = task();
        let mut p = ParamVector::zeros(t.spec().param_count());
        let bias = t.spec().output_layer_range().end - 1;
        p.as_mut_slice()[bias] = 2.0;
        let net = PolicyNet::from_params(t.spec().clone(), p).unwrap();
        let err = train(&t, net, &TrainerConfig::new(0.01, 3, 0), None, |_| {}).unwrap_err();
        assert!(matches!(err, ScpoError::InitialInfeasible { .. }));
    }

    #[test]
    fn invalid_config_names_the_field() {
        let mut c = TrainerConfig::new(0.01, 1, 0);
        c.bank_capacity = 0;
        assert!(c.validate().unwrap_err().to_string().contains("bank_capacity"));
    }

    #[test]
    fn short_run_is_safe_monotone_and_deterministic() {
        let t = task();
        let net = PolicyNet::init_zero_residual(t.spec().clone()).unwrap();
        let config = TrainerConfig::new(0.05, 30, 11);
        let a = train(&t, net.clone(), &config, None, |_| {}).unwrap();
        let b = train(&t, net, &config, None, |_| {}).unwrap();
        for r in &a.log.records {
            assert!(r.max_g <= SAFETY_TOLERANCE);
            if r.alpha > 0.0 {
                assert!(r.loss_after <= r.loss - 0.1 * r.alpha * r.step_norm.powi(2) + 1e-9);
            }
        }
        let strip = |log: &TrainLog| -> Vec<EpochRecord> {
            log.records
                .iter()
                .cloned()
                .map(|mut r| {
                    r.wall_ms = 0.0;
                    r
                })
                .collect()
        };
        assert_eq!(strip(&a.log), strip(&b.log));
        assert_eq!(a.net, b.net);
        assert!(a.log.records.iter().any(|r| r.alpha > 0.0));
    }

    /// Any move away from the origin of parameter space is unsafe.
    struct Pinned(RegressionTask);

    struct PinnedMetric;

    impl crate::metrics::SafetyMetric for PinnedMetric {
        fn dim(&self) -> usize {
            1
        }
        fn evaluate(&self, p: &ParamVector) -> Result<Vec<f64>> {
            Ok(vec![if p.is_zero() { -1.0 } else { 1.0 }])
        }
    }

    impl Task for Pinned {
        type Batch = Vec<(Vec<f64>, Vec<f64>)>;
        fn spec(&self) -> &NetSpec {
            self.0.spec()
        }
        fn metric(&self) -> &dyn crate::metrics::SafetyMetric {
            &PinnedMetric
        }
        fn sample_batch(&self, p: &ParamVector, rng: &mut ChaCha8Rng) -> Result<Self::Batch> {
            self.0.sample_batch(p, rng)
        }
        fn loss(&self, p: &ParamVector, b: &Self::Batch) -> Result<f64> {
            self.0.loss(p, b)
        }
        fn loss_and_grad(&self, p: &ParamVector, b: &Self::Batch) -> Result<(f64, ParamVector)> {
            self.0.loss_and_grad(p, b)
        }
    }

    #[test]
    fn fully_blocked_step_keeps_parameters() {
        let t = Pinned(task());
        let config = TrainerConfig::new(0.01, 1, 0);
        let mut state = TrainerState::initialize(&t, ParamVector::zeros(t.spec().param_count()), &config).unwrap();
        let batch = t.sample_batch(&state.theta, &mut epoch_rng(0, 0)).unwrap();
        let r = scpo_step(&t, &mut state, &batch, 64, &config).unwrap();
        assert_eq!(r.alpha, 0.0);
        assert_eq!(r.status, StepStatus::ZeroStep);
        assert!(state.theta.is_zero());
        assert_eq!(r.loss_after, r.loss);
        assert_eq!(state.g, vec![-1.0]);
    }

    #[test]
    fn soft_penalty_with_zero_weight_is_gradient_descent() {
        let t = task();
        let net = PolicyNet::init_zero_residual(t.spec().clone()).unwrap();
        let mut config = TrainerConfig::new(0.01, 1, 0);
        config.mode = TrainMode::SoftPenalty { lambda: 0.0 };
        let mut state = TrainerState::initialize(&t, net.params().clone(), &config).unwrap();
        let batch = t.sample_batch(&state.theta, &mut epoch_rng(0, 0)).unwrap();
        let (_, grad) = t.loss_and_grad(&state.theta, &batch).unwrap();
        let expected = &state.theta + &grad.scaled(-0.01);
        soft_penalty_step(&t, &mut state, &batch, 64, 0.0, &config).unwrap();
        assert_eq!(state.theta, expected);
    }
}
