//! Linear systems with an LQR backup controller, rollout value estimates and
//! the one-step improvement safety metric.

mod dare;
mod policy;
mod reach;
mod rollout;
mod safety;
mod system;
mod value;

pub use dare::{riccati_residual, solve_dare, spectral_radius, DareSolution, DARE_MAX_ITERATIONS, DARE_TOLERANCE};
pub use policy::{ActionWithSlope, ExpertPolicy, ResidualPolicy};
pub use reach::{estimate_reachable_set, REACH_HORIZON};
pub use rollout::{rollout, Trajectory};
pub use safety::{state_grid, ControlSafetyMetric};
pub use system::{LinearSystem, StageCost, TargetSet};
pub use value::{q_and_advantage, q_and_advantage_with_value, value_backup, BackupController, BackupModel, VALUE_HORIZON};
