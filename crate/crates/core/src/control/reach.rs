use rayon::prelude::*;

use super::rollout::rollout;
use super::system::{LinearSystem, StageCost, TargetSet};

pub const REACH_HORIZON: usize = 2000;

/// `mask[i]` is true when the closed loop from `grid[i]` stays in the state
/// box and enters the target within `horizon` steps.
///
/// `make_policy(i)` builds the controller used from `grid[i]`, so stochastic
/// policies can be seeded per start state.
pub fn estimate_reachable_set<F, P>(
    system: &LinearSystem,
    cost: &StageCost,
    target: &TargetSet,
    grid: &[Vec<f64>],
    horizon: usize,
    make_policy: F,
) -> Vec<bool>
where
    F: Fn(usize) -> P + Sync,
    P: FnMut(&[f64]) -> Vec<f64>,
{
    grid.par_iter()
        .enumerate()
        .map(|(i, x0)| {
            let tr = rollout(system, cost, make_policy(i), x0, horizon, target);
            tr.feasible && tr.reached_target
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{state_grid, BackupModel, VALUE_HORIZON};

    #[test]
    fn backup_mask_contains_origin_neighbourhood() {
        let m = BackupModel::new(
            LinearSystem::double_integrator(0.1, 15.0, 1.0).unwrap(),
            StageCost::identity(2, 1),
            TargetSet::ball(0.01),
            VALUE_HORIZON,
        )
        .unwrap();
        let mut grid = state_grid(&[-15.0, -15.0], &[15.0, 15.0], 50);
        grid.push(vec![0.0, 0.0]);
        grid.push(vec![20.0, 0.0]);
        let mask = estimate_reachable_set(&m.system, &m.cost, &m.target, &grid, REACH_HORIZON, |_| {
            |x: &[f64]| m.backup.act(x)
        });
        assert!(mask[2500]);
        assert!(!mask[2501]);
        let count = mask[..2500].iter().filter(|b| **b).count();
        assert!(count > 0 && count < 2500);
        for (x, ok) in grid[..2500].iter().zip(&mask) {
            if x[0].abs() < 2.0 && x[1].abs() < 1.0 {
                assert!(*ok, "{x:?}");
            }
        }
    }
}
