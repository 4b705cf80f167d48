use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result, ScpoError};

/// Discrete-time LTI system `x+ = A x + B u` with box constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub state_lo: Vec<f64>,
    pub state_hi: Vec<f64>,
    pub input_lo: Vec<f64>,
    pub input_hi: Vec<f64>,
    pub dt: f64,
}

fn check_box(what: &str, lo: &[f64], hi: &[f64]) -> Result<()> {
    if lo.iter().zip(hi).any(|(l, h)| !(*l < 0.0 && 0.0 < *h)) {
        return Err(ScpoError::Config(format!("{what} box must contain the origin strictly")));
    }
    Ok(())
}

impl LinearSystem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        state_lo: Vec<f64>,
        state_hi: Vec<f64>,
        input_lo: Vec<f64>,
        input_hi: Vec<f64>,
        dt: f64,
    ) -> Result<Self> {
        let nx = a.nrows();
        check_dim("A columns", nx, a.ncols())?;
        check_dim("B rows", nx, b.nrows())?;
        check_dim("state box", nx, state_lo.len())?;
        check_dim("state box", nx, state_hi.len())?;
        check_dim("input box", b.ncols(), input_lo.len())?;
        check_dim("input box", b.ncols(), input_hi.len())?;
        check_box("state", &state_lo, &state_hi)?;
        check_box("input", &input_lo, &input_hi)?;
        Ok(Self {
            a,
            b,
            state_lo,
            state_hi,
            input_lo,
            input_hi,
            dt,
        })
    }

    /// Position/velocity double integrator with symmetric boxes.
    pub fn double_integrator(dt: f64, state_bound: f64, input_bound: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[0.5 * dt * dt, dt]),
            vec![-state_bound; 2],
            vec![state_bound; 2],
            vec![-input_bound],
            vec![input_bound],
            dt,
        )
    }

    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    pub fn nu(&self) -> usize {
        self.b.ncols()
    }

    pub fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        (0..self.nx())
            .map(|i| {
                let ax: f64 = (0..self.nx()).map(|j| self.a[(i, j)] * x[j]).sum();
                let bu: f64 = (0..self.nu()).map(|j| self.b[(i, j)] * u[j]).sum();
                ax + bu
            })
            .collect()
    }

    pub fn in_state_box(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.state_lo.iter().zip(&self.state_hi))
            .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    pub fn clip_input(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.input_lo.iter().zip(&self.input_hi))
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect()
    }
}

/// `c(x, u) = x^T Q x + u^T R u`
#[derive(Debug, Clone, PartialEq)]
pub struct StageCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

pub(crate) fn quadratic(m: &DMatrix<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += v[i] * m[(i, j)] * v[j];
        }
    }
    acc
}

impl StageCost {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        for (name, m) in [("Q", &q), ("R", &r)] {
            if !m.is_square() || m != &m.transpose() {
                return Err(ScpoError::Config(format!("{name} must be square and symmetric")));
            }
            if m.clone().cholesky().is_none() {
                return Err(ScpoError::Config(format!("{name} must be positive definite")));
            }
        }
        Ok(Self { q, r })
    }

    pub fn identity(nx: usize, nu: usize) -> Self {
        Self {
            q: DMatrix::identity(nx, nx),
            r: DMatrix::identity(nu, nu),
        }
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        quadratic(&self.q, x) + quadratic(&self.r, u)
    }
}

/// Target neighbourhood of the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TargetSet {
    /// `||x|| <= radius`
    Ball { radius: f64 },
    /// `x^T P x <= level` for the backup controller's quadratic value `P`.
    ValueLevel { p: Vec<Vec<f64>>, level: f64 },
}

impl TargetSet {
    pub fn ball(radius: f64) -> Self {
        TargetSet::Ball { radius }
    }

    pub fn value_level(p: &DMatrix<f64>, level: f64) -> Self {
        TargetSet::ValueLevel {
            p: p.row_iter().map(|r| r.iter().copied().collect()).collect(),
            level,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            TargetSet::Ball { radius } => x.iter().map(|v| v * v).sum::<f64>().sqrt() <= *radius,
            TargetSet::ValueLevel { p, level } => {
                let mut acc = 0.0;
                for (i, row) in p.iter().enumerate() {
                    for (j, pij) in row.iter().enumerate() {
                        acc += x[i] * pij * x[j];
                    }
                }
                acc <= *level
            }
        }
    }
}
