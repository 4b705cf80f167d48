use super::system::{LinearSystem, StageCost, TargetSet};

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    /// Stage cost of each applied step.
    pub stage_costs: Vec<f64>,
    pub cost: f64,
    pub feasible: bool,
    pub reached_target: bool,
    pub steps_to_target: Option<usize>,
}

impl Trajectory {
    pub fn last_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has an initial state")
    }
}

/// Closed-loop simulation with input clipping.
///
/// Stops at the first state outside the state box (infeasible), at target
/// entry, or after `max_steps` applied inputs.
pub fn rollout<P>(
    system: &LinearSystem,
    cost: &StageCost,
    mut policy: P,
    x0: &[f64],
    max_steps: usize,
    target: &TargetSet,
) -> Trajectory
where
    P: FnMut(&[f64]) -> Vec<f64>,
{
    let mut traj = Trajectory {
        states: vec![x0.to_vec()],
        inputs: Vec::new(),
        stage_costs: Vec::new(),
        cost: 0.0,
        feasible: true,
        reached_target: false,
        steps_to_target: None,
    };
    let mut x = x0.to_vec();
    for k in 0..=max_steps {
        if !system.in_state_box(&x) {
            traj.feasible = false;
            break;
        }
        if target.contains(&x) {
            traj.reached_target = true;
            traj.steps_to_target = Some(k);
            break;
        }
        if k == max_steps {
            break;
        }
        let u = system.clip_input(&policy(&x));
        let c = cost.eval(&x, &u);
        x = system.step(&x, &u);
        traj.cost += c;
        traj.stage_costs.push(c);
        traj.inputs.push(u);
        traj.states.push(x.clone());
    }
    traj
}
