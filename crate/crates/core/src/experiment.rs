//! JSON-configured experiments and their plot-ready outputs.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::control::{
    estimate_reachable_set, rollout, state_grid, BackupModel, ControlSafetyMetric, ExpertPolicy, LinearSystem,
    StageCost, TargetSet, Trajectory,
};
use crate::error::{Result, ScpoError};
use crate::metrics::uniform_grid;
use crate::net::{Activation, NetSpec, PolicyNet};
use crate::params::ParamVector;
use crate::projection::{AdaptiveSettings, ArmijoSettings, SAFETY_TOLERANCE};
use crate::tasks::{regression_target, ControlTask, ControlTaskSettings, RegressionTask};
use crate::trainer::{train, CheckpointPolicy, EpochRecord, TrainMode, TrainOutcome, TrainerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Regression,
    DoubleIntegrator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModeKind {
    #[default]
    Scpo,
    SoftPenalty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    /// Defaults to 1e-2 for regression and 1e-3 for the double integrator.
    pub eta: Option<f64>,
    /// Update bank capacity.
    pub m: usize,
    pub sigma: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    pub growth_factor: f64,
    pub max_doublings: usize,
    pub safety_tolerance: f64,
    /// Soft-penalty weight (baseline mode only).
    pub penalty_lambda: f64,
    pub checkpoint_every: usize,
}

impl Default for TrainerSection {
    fn default() -> Self {
        Self {
            eta: None,
            m: 8,
            sigma: 0.1,
            shrink: 0.5,
            max_backtracks: 20,
            growth_factor: 2.0,
            max_doublings: 16,
            safety_tolerance: SAFETY_TOLERANCE,
            penalty_lambda: 1.0,
            checkpoint_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub hidden_width: usize,
    pub num_blocks: usize,
    pub activation: Activation,
    pub residual_blocks: bool,
    /// Defaults to the experiment seed.
    pub init_seed: Option<u64>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            hidden_width: 64,
            num_blocks: 7,
            activation: Activation::Tanh,
            residual_blocks: true,
            init_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionSection {
    pub batch_size: usize,
    pub grid_points: usize,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub bound: f64,
}

impl Default for RegressionSection {
    fn default() -> Self {
        Self {
            batch_size: 64,
            grid_points: 64,
            grid_lo: -3.0,
            grid_hi: 3.0,
            bound: 1.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSection {
    pub dt: f64,
    pub state_bound: f64,
    pub input_bound: f64,
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    pub target_radius: f64,
    pub value_horizon: usize,
    pub grid_resolution: usize,
    /// Margin is `(1 - mu) ||x||^2`.
    pub mu: f64,
    pub rollouts_per_epoch: usize,
    pub rollout_horizon: usize,
    pub max_resample_retries: usize,
    pub reach_horizon: usize,
    pub expert_gain: f64,
    /// Standard deviation of the expert's additive Gaussian noise.
    pub expert_noise_std: f64,
    /// Apply expert noise in the reachable-set estimate as well.
    pub expert_noise_in_reach: bool,
    /// Subtract `phi_theta(0)` so the origin stays an equilibrium of `pi_theta`.
    pub anchor_residual: bool,
    pub curve_initial_states: Vec<[f64; 2]>,
    pub curve_horizon: usize,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            dt: 0.1,
            state_bound: 15.0,
            input_bound: 1.0,
            q_diag: vec![1.0, 1.0],
            r_diag: vec![1.0],
            target_radius: 0.01,
            value_horizon: 3000,
            grid_resolution: 50,
            mu: 0.0,
            rollouts_per_epoch: 32,
            rollout_horizon: 200,
            max_resample_retries: 10,
            reach_horizon: 2000,
            expert_gain: 2.0,
            expert_noise_std: 0.4,
            expert_noise_in_reach: true,
            anchor_residual: true,
            curve_initial_states: vec![[-6.0, 3.0], [5.0, 1.0], [2.0, -4.0]],
            curve_horizon: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    #[serde(default)]
    pub mode: ModeKind,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to 200 for regression and 16 for the double integrator.
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub trainer: TrainerSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub regression: RegressionSection,
    #[serde(default)]
    pub control: ControlSection,
}

fn field_error(field: &str, why: &str) -> ScpoError {
    ScpoError::Config(format!("{field}: {why}"))
}

impl ExperimentConfig {
    pub fn new(task: TaskKind) -> Self {
        Self {
            task,
            mode: ModeKind::Scpo,
            seed: 0,
            epochs: None,
            output_dir: None,
            trainer: TrainerSection::default(),
            network: NetworkSection::default(),
            regression: RegressionSection::default(),
            control: ControlSection::default(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn eta(&self) -> f64 {
        self.trainer.eta.unwrap_or(match self.task {
            TaskKind::Regression => 1e-2,
            TaskKind::DoubleIntegrator => 1e-3,
        })
    }

    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(match self.task {
            TaskKind::Regression => 200,
            TaskKind::DoubleIntegrator => 16,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.trainer;
        if t.m == 0 {
            return Err(field_error("trainer.m", "bank capacity must be positive"));
        }
        if !(self.eta() > 0.0 && self.eta().is_finite()) {
            return Err(field_error("trainer.eta", "must be positive"));
        }
        if !(t.sigma > 0.0 && t.sigma < 1.0) {
            return Err(field_error("trainer.sigma", "must lie in (0, 1)"));
        }
        if !(t.shrink > 0.0 && t.shrink < 1.0) {
            return Err(field_error("trainer.shrink", "must lie in (0, 1)"));
        }
        if !(t.growth_factor > 1.0) {
            return Err(field_error("trainer.growth_factor", "must exceed 1"));
        }
        if !(t.safety_tolerance >= 0.0) {
            return Err(field_error("trainer.safety_tolerance", "must be >= 0"));
        }
        if !(t.penalty_lambda >= 0.0 && t.penalty_lambda.is_finite()) {
            return Err(field_error("trainer.penalty_lambda", "must be finite and >= 0"));
        }
        if t.checkpoint_every == 0 {
            return Err(field_error("trainer.checkpoint_every", "must be positive"));
        }
        if self.network.hidden_width == 0 || self.network.num_blocks == 0 {
            return Err(field_error("network", "hidden_width and num_blocks must be positive"));
        }
        match self.task {
            TaskKind::Regression => {
                let r = &self.regression;
                if r.batch_size == 0 {
                    return Err(field_error("regression.batch_size", "must be positive"));
                }
                if r.grid_points == 0 || !(r.grid_lo < r.grid_hi) {
                    return Err(field_error("regression.grid_points", "grid must be non-empty with grid_lo < grid_hi"));
                }
                if !(r.bound >= 0.0) {
                    return Err(field_error("regression.bound", "must be >= 0"));
                }
            }
            TaskKind::DoubleIntegrator => {
                let c = &self.control;
                if self.mode == ModeKind::SoftPenalty {
                    return Err(field_error("mode", "soft-penalty is only available for the regression task"));
                }
                if !(c.dt > 0.0) {
                    return Err(field_error("control.dt", "must be positive"));
                }
                if !(c.state_bound > 0.0 && c.input_bound > 0.0) {
                    return Err(field_error("control.state_bound", "state and input bounds must be positive"));
                }
                if c.q_diag.len() != 2 || c.r_diag.len() != 1 {
                    return Err(field_error("control.q_diag", "need two state weights and one input weight"));
                }
                if c.q_diag.iter().chain(&c.r_diag).any(|v| !(*v > 0.0)) {
                    return Err(field_error("control.q_diag", "weights must be positive"));
                }
                if !(c.target_radius > 0.0) {
                    return Err(field_error("control.target_radius", "must be positive"));
                }
                for (name, v) in [
                    ("control.value_horizon", c.value_horizon),
                    ("control.grid_resolution", c.grid_resolution),
                    ("control.rollouts_per_epoch", c.rollouts_per_epoch),
                    ("control.rollout_horizon", c.rollout_horizon),
                    ("control.reach_horizon", c.reach_horizon),
                ] {
                    if v == 0 {
                        return Err(field_error(name, "must be positive"));
                    }
                }
                if !(c.expert_noise_std >= 0.0) {
                    return Err(field_error("control.expert_noise_std", "must be >= 0"));
                }
            }
        }
        Ok(())
    }

    pub fn net_spec(&self) -> NetSpec {
        let (i, o) = match self.task {
            TaskKind::Regression => (1, 1),
            TaskKind::DoubleIntegrator => (2, 1),
        };
        NetSpec::new(i, o, self.network.hidden_width, self.network.num_blocks)
            .with_activation(self.network.activation)
            .with_residual_blocks(self.network.residual_blocks)
            .with_seed(self.network.init_seed.unwrap_or(self.seed))
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        let t = &self.trainer;
        TrainerConfig {
            eta: self.eta(),
            bank_capacity: t.m,
            armijo: ArmijoSettings {
                sigma: t.sigma,
                shrink: t.shrink,
                max_backtracks: t.max_backtracks,
            },
            adaptive: AdaptiveSettings {
                growth_factor: t.growth_factor,
                max_doublings: t.max_doublings,
                tolerance: t.safety_tolerance,
            },
            epochs: self.epochs(),
            seed: self.seed,
            mode: match self.mode {
                ModeKind::Scpo => TrainMode::Scpo,
                ModeKind::SoftPenalty => TrainMode::SoftPenalty {
                    lambda: t.penalty_lambda,
                },
            },
        }
    }

    pub fn regression_task(&self) -> Result<RegressionTask> {
        let r = &self.regression;
        RegressionTask::new(
            self.net_spec(),
            r.batch_size,
            uniform_grid(r.grid_lo, r.grid_hi, r.grid_points),
            r.bound,
        )
    }

    pub fn backup_model(&self) -> Result<BackupModel> {
        let c = &self.control;
        let system = LinearSystem::double_integrator(c.dt, c.state_bound, c.input_bound)?;
        let cost = StageCost::new(DMatrix::from_diagonal(&c.q_diag.clone().into()), DMatrix::from_diagonal(&c.r_diag.clone().into()))?;
        BackupModel::new(system, cost, TargetSet::ball(c.target_radius), c.value_horizon)
    }

    pub fn input_scale(&self) -> Vec<f64> {
        vec![1.0 / self.control.state_bound; 2]
    }

    pub fn state_grid(&self) -> Vec<Vec<f64>> {
        let b = self.control.state_bound;
        state_grid(&[-b, -b], &[b, b], self.control.grid_resolution)
    }

    pub fn expert(&self) -> ExpertPolicy {
        let c = &self.control;
        ExpertPolicy {
            gain: c.expert_gain,
            noise_std: c.expert_noise_std,
            input_lo: -c.input_bound,
            input_hi: c.input_bound,
        }
    }

    pub fn control_task(&self) -> Result<ControlTask> {
        let c = &self.control;
        let model = self.backup_model()?;
        let metric = ControlSafetyMetric::new(model, self.net_spec(), self.input_scale(), &self.state_grid(), c.mu)?
            .with_anchored_residual(c.anchor_residual);
        ControlTask::new(
            self.net_spec(),
            metric,
            self.expert(),
            ControlTaskSettings {
                rollouts_per_epoch: c.rollouts_per_epoch,
                rollout_horizon: c.rollout_horizon,
                max_resample_retries: c.max_resample_retries,
            },
        )
    }
}

/// Column order of `log.csv`.
pub const LOG_COLUMNS: [&str; 15] = EpochRecord::CSV_HEADER;
pub const REGRESSION_CURVE_COLUMNS: [&str; 4] = ["x", "policy", "target", "bound"];
pub const TRAJECTORY_COLUMNS: [&str; 8] = ["policy", "trajectory", "k", "x1", "x2", "u", "stage_cost", "total_cost"];
pub const MASK_COLUMNS: [&str; 3] = ["x1", "x2", "flag"];

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn csv_err(e: csv::Error) -> ScpoError {
    ScpoError::Io(std::io::Error::other(e))
}

pub fn write_log_csv(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(LOG_COLUMNS).map_err(csv_err)?;
    for r in records {
        w.write_record(r.csv_row()).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_mask_csv(path: &Path, grid: &[Vec<f64>], mask: &[bool]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(MASK_COLUMNS).map_err(csv_err)?;
    for (x, m) in grid.iter().zip(mask) {
        w.write_record([x[0].to_string(), x[1].to_string(), u8::from(*m).to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Labelled closed-loop trajectory for the curve file.
#[derive(Debug, Clone)]
pub struct LabelledTrajectory {
    pub policy: &'static str,
    pub index: usize,
    pub trajectory: Trajectory,
}

fn write_trajectories(path: &Path, trajectories: &[LabelledTrajectory]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(TRAJECTORY_COLUMNS).map_err(csv_err)?;
    for lt in trajectories {
        let tr = &lt.trajectory;
        for (k, x) in tr.states.iter().enumerate() {
            let (u, c) = match (tr.inputs.get(k), tr.stage_costs.get(k)) {
                (Some(u), Some(c)) => (u[0].to_string(), c.to_string()),
                _ => (String::new(), String::new()),
            };
            w.write_record([
                lt.policy.to_string(),
                lt.index.to_string(),
                k.to_string(),
                x[0].to_string(),
                x[1].to_string(),
                u,
                c,
                tr.cost.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// RNG for anything drawn outside the training epochs (stream 0).
fn auxiliary_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream offset for per-state expert noise in reachable-set estimates.
const REACH_STREAM_BASE: u64 = 1 << 40;

/// Closed-loop trajectories under the backup, the trained policy and the
/// expert from the configured initial states.
pub fn control_trajectories(config: &ExperimentConfig, task: &ControlTask, params: &ParamVector) -> Vec<LabelledTrajectory> {
    let model = task.model();
    let c = &config.control;
    let policy = task.policy(params);
    let expert = task.expert();
    let mut out = Vec::new();
    let mut rng = auxiliary_rng(config.seed, 0);
    for (i, x0) in c.curve_initial_states.iter().enumerate() {
        let safe = rollout(&model.system, &model.cost, |x| model.backup.act(x), x0, c.curve_horizon, &model.target);
        let theta = rollout(&model.system, &model.cost, |x| policy.act(x), x0, c.curve_horizon, &model.target);
        let beta = rollout(&model.system, &model.cost, |x| vec![expert.act(x, &mut rng)], x0, c.curve_horizon, &model.target);
        for (policy, trajectory) in [("safe", safe), ("theta", theta), ("expert", beta)] {
            out.push(LabelledTrajectory {
                policy,
                index: i,
                trajectory,
            });
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub outcome: TrainOutcome,
    pub out_dir: PathBuf,
    pub elapsed_s: f64,
}

/// Train as configured and write `config.json`, `log.csv`,
/// `final_policy.ckpt`, `curve.csv` and `checkpoints/` under `out_dir`.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<ExperimentRun> {
    config.validate()?;
    let start = std::time::Instant::now();
    fs::create_dir_all(out_dir)?;
    let echo = serde_json::to_value(config)?;
    fs::write(out_dir.join("config.json"), serde_json::to_string_pretty(&echo)?)?;
    let checkpoints = CheckpointPolicy {
        dir: out_dir.join("checkpoints"),
        every: config.trainer.checkpoint_every,
        config_echo: Some(echo.clone()),
    };
    let net = PolicyNet::init_zero_residual(config.net_spec())?;
    let trainer = config.trainer_config();

    let outcome = match config.task {
        TaskKind::Regression => {
            let task = config.regression_task()?;
            let outcome = train(&task, net, &trainer, Some(&checkpoints), on_epoch)?;
            write_regression_curve(&out_dir.join("curve.csv"), &task, outcome.net.params())?;
            outcome
        }
        TaskKind::DoubleIntegrator => {
            let task = config.control_task()?;
            let outcome = train(&task, net, &trainer, Some(&checkpoints), on_epoch)?;
            let trajectories = control_trajectories(config, &task, outcome.net.params());
            write_trajectories(&out_dir.join("curve.csv"), &trajectories)?;
            outcome
        }
    };
    write_log_csv(&out_dir.join("log.csv"), &outcome.log.records)?;
    Checkpoint::from_net(&outcome.net, Some(config.epochs() as u64), Some(echo)).save(out_dir.join("final_policy.ckpt"))?;
    Ok(ExperimentRun {
        outcome,
        out_dir: out_dir.to_path_buf(),
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

fn write_regression_curve(path: &Path, task: &RegressionTask, params: &ParamVector) -> Result<()> {
    let metric = task.grid_metric();
    let mut w = csv_writer(path)?;
    w.write_record(REGRESSION_CURVE_COLUMNS).map_err(csv_err)?;
    for &x in metric.grid() {
        let y = task.policy(params, x)?;
        w.write_record([
            x.to_string(),
            y.to_string(),
            regression_target(x).to_string(),
            metric.bound().to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// True-counts of the three reachable-set masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReachableCounts {
    pub grid: usize,
    pub safe: usize,
    pub theta: usize,
    pub expert: usize,
    /// Cells reachable under the backup but not under the trained policy.
    pub safe_not_theta: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachableMasks {
    pub grid: Vec<Vec<f64>>,
    pub safe: Vec<bool>,
    pub theta: Vec<bool>,
    pub expert: Vec<bool>,
}

impl ReachableMasks {
    pub fn counts(&self) -> ReachableCounts {
        let count = |m: &[bool]| m.iter().filter(|b| **b).count();
        ReachableCounts {
            grid: self.grid.len(),
            safe: count(&self.safe),
            theta: count(&self.theta),
            expert: count(&self.expert),
            safe_not_theta: self.safe.iter().zip(&self.theta).filter(|(s, t)| **s && !**t).count(),
        }
    }
}

/// Reachable-set masks of the backup, the given parameters and the expert
/// over the configured state grid.
pub fn reachable_masks(config: &ExperimentConfig, params: &ParamVector) -> Result<ReachableMasks> {
    let task = config.control_task()?;
    let model = task.model();
    let c = &config.control;
    let grid = config.state_grid();
    let policy = task.policy(params);
    let expert = task.expert().clone();
    let safe = estimate_reachable_set(&model.system, &model.cost, &model.target, &grid, c.reach_horizon, |_| {
        |x: &[f64]| model.backup.act(x)
    });
    let theta = estimate_reachable_set(&model.system, &model.cost, &model.target, &grid, c.reach_horizon, |_| {
        |x: &[f64]| policy.act(x)
    });
    let noisy = c.expert_noise_in_reach;
    let seed = config.seed;
    let expert_mask = estimate_reachable_set(&model.system, &model.cost, &model.target, &grid, c.reach_horizon, |i| {
        let mut rng = auxiliary_rng(seed, REACH_STREAM_BASE + i as u64);
        let e = expert.clone();
        move |x: &[f64]| {
            if noisy {
                vec![e.act(x, &mut rng)]
            } else {
                vec![e.act_with_noise(x, 0.0)]
            }
        }
    });
    Ok(ReachableMasks {
        grid,
        safe,
        theta,
        expert: expert_mask,
    })
}

/// Load a policy checkpoint and write `mask_safe.csv`, `mask_theta.csv` and
/// `mask_expert.csv` under `out_dir`.
pub fn run_reachable(config: &ExperimentConfig, policy_ckpt: &Path, out_dir: &Path) -> Result<ReachableCounts> {
    config.validate()?;
    if config.task != TaskKind::DoubleIntegrator {
        return Err(field_error("task", "reachable-set analysis needs the double-integrator task"));
    }
    if !policy_ckpt.exists() {
        return Err(ScpoError::Checkpoint(format!("missing checkpoint {}", policy_ckpt.display())));
    }
    let ck = Checkpoint::load(policy_ckpt)?;
    let net = ck.into_net()?;
    if net.spec().param_count() != config.net_spec().param_count() {
        return Err(ScpoError::Checkpoint("checkpoint architecture does not match the config".into()));
    }
    let masks = reachable_masks(config, net.params())?;
    fs::create_dir_all(out_dir)?;
    write_mask_csv(&out_dir.join("mask_safe.csv"), &masks.grid, &masks.safe)?;
    write_mask_csv(&out_dir.join("mask_theta.csv"), &masks.grid, &masks.theta)?;
    write_mask_csv(&out_dir.join("mask_expert.csv"), &masks.grid, &masks.expert)?;
    Ok(masks.counts())
}
