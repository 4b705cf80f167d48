//! Cost-to-go of the backup controller estimated by rollout.

use nalgebra::DMatrix;

use super::dare::solve_dare;
use super::rollout::rollout;
use super::system::{quadratic, LinearSystem, StageCost, TargetSet};
use crate::error::{check_dim, Result};

/// `pi_safe(x) = clip(-K x)` with the DARE value matrix `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackupController {
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub input_lo: Vec<f64>,
    pub input_hi: Vec<f64>,
}

impl BackupController {
    pub fn lqr(system: &LinearSystem, cost: &StageCost) -> Result<Self> {
        let sol = solve_dare(&system.a, &system.b, &cost.q, &cost.r)?;
        Ok(Self {
            k: sol.k,
            p: sol.p,
            input_lo: system.input_lo.clone(),
            input_hi: system.input_hi.clone(),
        })
    }

    /// Unclipped `-K x`.
    pub fn raw_action(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k.nrows())
            .map(|i| -(0..self.k.ncols()).map(|j| self.k[(i, j)] * x[j]).sum::<f64>())
            .collect()
    }

    pub fn act(&self, x: &[f64]) -> Vec<f64> {
        self.clip(&self.raw_action(x))
    }

    pub fn clip(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.input_lo.iter().zip(&self.input_hi))
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect()
    }
}

/// Everything needed to evaluate `V`, `Q` and the advantage of the backup.
#[derive(Debug, Clone, PartialEq)]
pub struct BackupModel {
    pub system: LinearSystem,
    pub cost: StageCost,
    pub backup: BackupController,
    pub target: TargetSet,
    /// Rollout horizon before the value is declared infinite.
    pub horizon: usize,
}

pub const VALUE_HORIZON: usize = 3000;

impl BackupModel {
    pub fn new(system: LinearSystem, cost: StageCost, target: TargetSet, horizon: usize) -> Result<Self> {
        check_dim("state cost", system.nx(), cost.q.nrows())?;
        check_dim("input cost", system.nu(), cost.r.nrows())?;
        let backup = BackupController::lqr(&system, &cost)?;
        Ok(Self {
            system,
            cost,
            backup,
            target,
            horizon,
        })
    }
}

/// Rollout cost of `pi_safe` until target entry plus `x_N^T P x_N`, or
/// `+inf` if the rollout leaves the state box or misses the target.
///
/// Stage costs are accumulated from the end so that the estimate at `x`
/// equals `c(x, pi_safe(x))` plus the estimate at the successor, bit for bit.
pub fn value_backup(model: &BackupModel, x: &[f64]) -> f64 {
    let tr = rollout(
        &model.system,
        &model.cost,
        |s| model.backup.act(s),
        x,
        model.horizon,
        &model.target,
    );
    if !tr.feasible || !tr.reached_target {
        return f64::INFINITY;
    }
    let mut acc = quadratic(&model.backup.p, tr.last_state());
    for c in tr.stage_costs.iter().rev() {
        acc = c + acc;
    }
    acc
}

/// `Q = c(x, u) + V(A x + B u)` and `A = Q - V(x)`, with `u` clipped first.
pub fn q_and_advantage(model: &BackupModel, x: &[f64], u: &[f64]) -> (f64, f64) {
    q_and_advantage_with_value(model, x, u, value_backup(model, x))
}

/// As [`q_and_advantage`] with a precomputed `V(x)`.
pub fn q_and_advantage_with_value(model: &BackupModel, x: &[f64], u: &[f64], v_x: f64) -> (f64, f64) {
    let u = model.system.clip_input(u);
    let next = model.system.step(x, &u);
    let q = if model.system.in_state_box(&next) {
        model.cost.eval(x, &u) + value_backup(model, &next)
    } else {
        f64::INFINITY
    };
    let adv = if q == f64::INFINITY {
        f64::INFINITY
    } else if v_x == f64::INFINITY {
        f64::NEG_INFINITY
    } else {
        q - v_x
    };
    (q, adv)
}
