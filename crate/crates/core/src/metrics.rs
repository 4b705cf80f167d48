//! Pointwise safety metrics `g(theta)`; safe means every component `<= 0`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result, ScpoError};
use crate::net::{NetSpec, PolicyNet};
use crate::params::ParamVector;

/// A deterministic, zeroth-order map from parameters to `k` safety values.
///
/// Implementations are only ever evaluated; no gradient is requested.
pub trait SafetyMetric: Sync {
    fn dim(&self) -> usize;

    fn evaluate(&self, params: &ParamVector) -> Result<Vec<f64>>;
}

type ScalarPolicy = dyn Fn(&ParamVector, f64) -> Result<f64> + Send + Sync;

/// `g_j = |pi_theta(v_j)| - bound` over a fixed 1-D grid.
pub struct GridBoundMetric {
    grid: Vec<f64>,
    bound: f64,
    policy: Box<ScalarPolicy>,
}

impl std::fmt::Debug for GridBoundMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GridBoundMetric")
            .field("points", &self.grid.len())
            .field("bound", &self.bound)
            .finish()
    }
}

/// `n` points from `lo` to `hi`, both endpoints included.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl GridBoundMetric {
    pub fn new<F>(grid: Vec<f64>, bound: f64, policy: F) -> Result<Self>
    where
        F: Fn(&ParamVector, f64) -> Result<f64> + Send + Sync + 'static,
    {
        if grid.is_empty() {
            return Err(ScpoError::Config("grid bound metric needs at least one point".into()));
        }
        Ok(Self {
            grid,
            bound,
            policy: Box::new(policy),
        })
    }

    /// Metric on the scalar network policy `pi_theta = phi_theta`
    /// (the backup is the zero function).
    pub fn for_network(spec: NetSpec, grid: Vec<f64>, bound: f64) -> Result<Self> {
        if spec.input_dim != 1 || spec.output_dim != 1 {
            return Err(ScpoError::Config("grid bound metric needs a scalar network".into()));
        }
        let template = PolicyNet::from_params(spec.clone(), ParamVector::zeros(spec.param_count()))?;
        Self::new(grid, bound, move |params, x| {
            check_dim("parameter vector", template.param_count(), params.len())?;
            Ok(template.view_with(params.as_slice()).forward_unchecked(&[x])[0])
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn eval_grid_bound(&self, params: &ParamVector) -> Result<Vec<f64>> {
        self.grid
            .iter()
            .map(|&v| Ok((self.policy)(params, v)?.abs() - self.bound))
            .collect()
    }
}

impl SafetyMetric for GridBoundMetric {
    fn dim(&self) -> usize {
        self.grid.len()
    }

    fn evaluate(&self, params: &ParamVector) -> Result<Vec<f64>> {
        self.eval_grid_bound(params)
    }
}

/// Reporting summaries of a safety vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationSummary {
    /// `||g||_1 / k`
    pub raw: f64,
    /// `||max(g, 0)||_1 / k`; zero exactly when every component is safe.
    pub positive: f64,
}

pub fn violation_summary(g: &[f64]) -> ViolationSummary {
    if g.is_empty() {
        return ViolationSummary {
            raw: 0.0,
            positive: 0.0,
        };
    }
    let k = g.len() as f64;
    ViolationSummary {
        raw: g.iter().map(|v| v.abs()).sum::<f64>() / k,
        positive: g.iter().map(|v| v.max(0.0)).sum::<f64>() / k,
    }
}
