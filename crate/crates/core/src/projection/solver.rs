//! Log-barrier interior-point solver for the projection program.
//!
//! The `|c|` term is lifted with auxiliary variables `a >= |c|`, written as
//! the paired linear inequalities `c_i - a_i <= 0` and `-c_i - a_i <= 0`. The
//! lifted program in `z = (c, a)` is smooth and convex. A tiny linear weight on
//! `sum(a)` keeps the barrier bounded along null directions of `S`.
//!
//! The solver starts from the strictly feasible point `c = 0, a > 0`, which is
//! available whenever the reference is safe. When a reference component sits
//! within `reference_margin` of zero, that constraint is relaxed by at most
//! `reference_margin + g_ref_j` so the start stays strictly interior.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::bank::UpdateBank;
use super::problem::{build_problem, ProjectionProblem};
use crate::error::Result;
use crate::params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionStatus {
    /// The raw gradient step satisfies the surrogate constraints; `c = e_m`.
    RawStepFeasible,
    Projected,
    /// The accepted step is zero (fully blocked or verification exhausted).
    ZeroStep,
    /// The solver failed to converge; the step falls back to zero.
    InfeasibleFallback,
}

impl ProjectionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ProjectionStatus::RawStepFeasible => "raw-step-feasible",
            ProjectionStatus::Projected => "projected",
            ProjectionStatus::ZeroStep => "zero-step",
            ProjectionStatus::InfeasibleFallback => "infeasible-fallback",
        }
    }
}

impl fmt::Display for ProjectionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Multiplier applied to the barrier parameter between centering stages.
    pub barrier_factor: f64,
    /// Target duality-gap bound `n / t` on the normalized objective.
    pub gap_tolerance: f64,
    /// Largest gap accepted if Newton stalls before reaching the target.
    pub accept_gap: f64,
    pub max_newton_per_stage: usize,
    pub max_stages: usize,
    /// Added to the Newton Hessian only.
    pub hessian_regularization: f64,
    pub l1_weight: f64,
    pub reference_margin: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            barrier_factor: 10.0,
            gap_tolerance: 1e-11,
            accept_gap: 1e-8,
            max_newton_per_stage: 100,
            max_stages: 40,
            hessian_regularization: 1e-10,
            l1_weight: 1e-10,
            reference_margin: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcqpSolution {
    pub c: Vec<f64>,
    pub objective: f64,
    pub status: ProjectionStatus,
    pub newton_steps: usize,
    /// Final bound on the normalized duality gap (0 for closed-form cases).
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub c_star: Vec<f64>,
    pub delta_star: ParamVector,
    pub objective: f64,
    pub status: ProjectionStatus,
}

impl ProjectionResult {
    pub fn zero(m: usize, d: usize, status: ProjectionStatus) -> Self {
        Self {
            c_star: vec![0.0; m],
            delta_star: ParamVector::zeros(d),
            objective: f64::NAN,
            status,
        }
    }
}

pub fn solve_projection(problem: &ProjectionProblem) -> QcqpSolution {
    solve_projection_with(problem, &SolverSettings::default())
}

/// Build, solve, and map the solution back to parameter space.
pub fn project(bank: &UpdateBank, l: &[f64]) -> Result<ProjectionResult> {
    let problem = build_problem(bank, l)?;
    let sol = solve_projection(&problem);
    let delta_star = bank.combine(&sol.c)?;
    Ok(ProjectionResult {
        c_star: sol.c,
        delta_star,
        objective: sol.objective,
        status: sol.status,
    })
}

struct QuadConstraint {
    constant: f64,
    lin_c: DVector<f64>,
    lin_a: DVector<f64>,
    l: f64,
}

/// Lifted program over the active columns.
struct Lifted {
    p: usize,
    s: DMatrix<f64>,
    s_lin: DVector<f64>,
    s_mm: f64,
    scale: f64,
    l1_weight: f64,
    quad: Vec<QuadConstraint>,
}

impl Lifted {
    fn n_constraints(&self) -> usize {
        self.quad.len() + 2 * self.p
    }

    fn objective(&self, c: &DVector<f64>, a: &DVector<f64>) -> f64 {
        let sc = &self.s * c;
        (c.dot(&sc) - 2.0 * self.s_lin.dot(c) + self.s_mm) / self.scale + self.l1_weight * a.sum()
    }

    /// Constraint values; `None` if any is not strictly negative.
    fn constraints(&self, c: &DVector<f64>, a: &DVector<f64>) -> Option<Vec<f64>> {
        let sc = &self.s * c;
        let quad = c.dot(&sc);
        let mut out = Vec::with_capacity(self.n_constraints());
        for q in &self.quad {
            out.push(q.constant + q.lin_c.dot(c) + q.lin_a.dot(a) + 0.5 * q.l * quad);
        }
        for i in 0..self.p {
            out.push(c[i] - a[i]);
            out.push(-c[i] - a[i]);
        }
        if out.iter().all(|v| *v < 0.0) {
            Some(out)
        } else {
            None
        }
    }

    fn barrier(&self, t: f64, z: &DVector<f64>) -> Option<f64> {
        let (c, a) = self.split(z);
        let f = self.constraints(&c, &a)?;
        Some(t * self.objective(&c, &a) - f.iter().map(|v| (-v).ln()).sum::<f64>())
    }

    fn split(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (z.rows(0, self.p).into_owned(), z.rows(self.p, self.p).into_owned())
    }

    fn gradient_hessian(&self, t: f64, z: &DVector<f64>, f: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.p;
        let n = 2 * p;
        let (c, _) = self.split(z);
        let sc = &self.s * &c;
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);

        grad.rows_mut(0, p).copy_from(&((&sc - &self.s_lin) * (2.0 * t / self.scale)));
        grad.rows_mut(p, p).fill(t * self.l1_weight);
        hess.view_mut((0, 0), (p, p)).copy_from(&(&self.s * (2.0 * t / self.scale)));

        let mut gi = DVector::zeros(n);
        for (q, &fj) in self.quad.iter().zip(f) {
            let inv = 1.0 / -fj;
            gi.rows_mut(0, p).copy_from(&(&q.lin_c + &sc * q.l));
            gi.rows_mut(p, p).copy_from(&q.lin_a);
            grad.axpy(inv, &gi, 1.0);
            hess.ger(inv * inv, &gi, &gi, 1.0);
            if q.l != 0.0 {
                let mut block = hess.view_mut((0, 0), (p, p));
                block += &self.s * (q.l * inv);
            }
        }
        for i in 0..p {
            for (sign, fj) in [(1.0, f[self.quad.len() + 2 * i]), (-1.0, f[self.quad.len() + 2 * i + 1])] {
                // constraint: sign * c_i - a_i
                let inv = 1.0 / -fj;
                grad[i] += sign * inv;
                grad[p + i] -= inv;
                let w = inv * inv;
                hess[(i, i)] += w;
                hess[(p + i, p + i)] += w;
                hess[(i, p + i)] -= sign * w;
                hess[(p + i, i)] -= sign * w;
            }
        }
        (grad, hess)
    }
}

fn newton_direction(hess: DMatrix<f64>, grad: &DVector<f64>, reg: f64) -> Option<DVector<f64>> {
    let n = hess.nrows();
    let scale = (0..n).map(|i| hess[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let mut shift = reg;
    for _ in 0..8 {
        let h = &hess + DMatrix::identity(n, n) * (shift * scale);
        if let Some(ch) = h.clone().cholesky() {
            let d = -ch.solve(grad);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        shift = (shift * 100.0).max(1e-12);
    }
    None
}

pub fn solve_projection_with(problem: &ProjectionProblem, settings: &SolverSettings) -> QcqpSolution {
    let m = problem.m();
    let last = m - 1;
    let zero = |status| QcqpSolution {
        c: vec![0.0; m],
        objective: problem.objective(&vec![0.0; m]),
        status,
        newton_steps: 0,
        gap: 0.0,
    };

    if problem.active[last] {
        let e = problem.e_m();
        if problem.constraint_values(&e).iter().all(|v| *v <= 0.0) {
            return QcqpSolution {
                c: e,
                objective: 0.0,
                status: ProjectionStatus::RawStepFeasible,
                newton_steps: 0,
                gap: 0.0,
            };
        }
    }

    let idx: Vec<usize> = (0..m).filter(|&i| problem.active[i]).collect();
    let p = idx.len();
    let scale = problem.diag_s.iter().copied().fold(0.0, f64::max);
    if p == 0 || !(scale > 0.0) {
        return zero(ProjectionStatus::ZeroStep);
    }

    let s = DMatrix::from_fn(p, p, |i, j| problem.s[(idx[i], idx[j])]);
    let s_lin = DVector::from_fn(p, |i, _| problem.s[(idx[i], last)]);
    let diag_a = DVector::from_fn(p, |i, _| problem.diag_s[idx[i]]);
    let diag_sum = diag_a.sum();

    let mut quad = Vec::with_capacity(problem.k());
    let mut a0 = 1.0f64;
    for j in 0..problem.k() {
        let g_ref = problem.g_ref[j];
        let relax = (g_ref + settings.reference_margin).max(0.0);
        let room = relax - g_ref;
        let l = problem.l[j];
        let lin_a = &diag_a * (0.5 * l);
        let slope = 0.5 * l * diag_sum;
        if slope > 0.0 {
            a0 = a0.min(0.5 * room / slope);
        }
        quad.push(QuadConstraint {
            constant: g_ref - relax,
            lin_c: DVector::from_fn(p, |i, _| problem.g[(j, idx[i])] - g_ref),
            lin_a,
            l,
        });
    }
    let lifted = Lifted {
        p,
        s,
        s_lin,
        s_mm: problem.s[(last, last)],
        scale,
        l1_weight: settings.l1_weight,
        quad,
    };

    let mut z = DVector::zeros(2 * p);
    z.rows_mut(p, p).fill(a0);
    if lifted.constraints(&DVector::zeros(p), &DVector::from_element(p, a0)).is_none() {
        return zero(ProjectionStatus::InfeasibleFallback);
    }

    let n_con = lifted.n_constraints() as f64;
    let mut t = 1.0;
    let mut steps = 0usize;
    let mut converged = false;
    for _ in 0..settings.max_stages {
        let mut stalled = false;
        for _ in 0..settings.max_newton_per_stage {
            let (c, a) = lifted.split(&z);
            let f = lifted.constraints(&c, &a).expect("iterate stays strictly feasible");
            let (grad, hess) = lifted.gradient_hessian(t, &z, &f);
            let Some(dz) = newton_direction(hess, &grad, settings.hessian_regularization) else {
                stalled = true;
                break;
            };
            let decrement = -grad.dot(&dz);
            if decrement / 2.0 <= 1e-12 {
                break;
            }
            let phi0 = lifted.barrier(t, &z).expect("feasible");
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..80 {
                let trial = &z + &dz * step;
                if let Some(phi) = lifted.barrier(t, &trial) {
                    if phi <= phi0 - 0.25 * step * decrement {
                        z = trial;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            steps += 1;
            if !accepted {
                stalled = decrement > 1e-8;
                break;
            }
        }
        let gap = n_con / t;
        if gap <= settings.gap_tolerance {
            converged = true;
            break;
        }
        if stalled {
            converged = gap <= settings.accept_gap;
            break;
        }
        t *= settings.barrier_factor;
    }
    let gap = n_con / t;
    if !converged && gap > settings.accept_gap {
        return zero(ProjectionStatus::InfeasibleFallback);
    }

    let mut c = vec![0.0; m];
    for (k, &i) in idx.iter().enumerate() {
        c[i] = z[k];
    }
    let cv = DVector::from_column_slice(&c);
    let step_sq = (cv.transpose() * &problem.s * &cv)[(0, 0)];
    if step_sq <= 1e-24 * scale {
        return QcqpSolution {
            newton_steps: steps,
            gap,
            ..zero(ProjectionStatus::ZeroStep)
        };
    }
    QcqpSolution {
        objective: problem.objective(&c),
        c,
        status: ProjectionStatus::Projected,
        newton_steps: steps,
        gap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem_1d(g: f64, g_ref: f64, l: f64) -> ProjectionProblem {
        ProjectionProblem::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, g),
            vec![g_ref],
            vec![l],
        )
        .unwrap()
    }

    /// Brute-force scan of c over [-3, 3] at step 1e-4.
    fn scan_1d(p: &ProjectionProblem) -> (f64, f64) {
        let mut best = (f64::NAN, f64::INFINITY);
        for i in 0..=60_000 {
            let c = -3.0 + i as f64 * 1e-4;
            if p.max_violation(&[c]) <= 0.0 {
                let obj = p.objective(&[c]);
                if obj < best.1 {
                    best = (c, obj);
                }
            }
        }
        best
    }

    #[test]
    fn feasible_raw_step_is_returned_unchanged() {
        let p = problem_1d(-0.9, -1.0, 0.1);
        let sol = solve_projection(&p);
        assert_eq!(sol.status, ProjectionStatus::RawStepFeasible);
        assert_eq!(sol.c, vec![1.0]);
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn one_dimensional_instance_matches_scan() {
        let p = problem_1d(0.5, -1.0, 1.0);
        let (c_ref, _) = scan_1d(&p);
        let sol = solve_projection(&p);
        assert_eq!(sol.status, ProjectionStatus::Projected);
        assert!((sol.c[0] - c_ref).abs() <= 1e-3, "{} vs {c_ref}", sol.c[0]);
        assert!(p.max_violation(&sol.c) <= 1e-8);
        // on c >= 0 the constraint reads c^2/2 + 2c - 1 <= 0
        let root = 6f64.sqrt() - 2.0;
        assert!((sol.c[0] - root).abs() <= 1e-6);
    }

    #[test]
    fn two_dimensional_instance_matches_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dm = DMatrix::from_column_slice(3, 2, &d);
        let s = dm.transpose() * &dm;
        let g = DMatrix::from_row_slice(1, 2, &[-0.2, 0.6]);
        let p = ProjectionProblem::new(s, g, vec![-0.5], vec![1.5]).unwrap();
        let sol = solve_projection(&p);
        assert!(p.max_violation(&sol.c) <= 1e-8);
        let mut best = f64::INFINITY;
        let n = 6000;
        for i in 0..=n {
            let c0 = -3.0 + 6.0 * i as f64 / n as f64;
            for j in 0..=n {
                let c = [c0, -3.0 + 6.0 * j as f64 / n as f64];
                let obj = p.objective(&c);
                if obj < best && p.max_violation(&c) <= 0.0 {
                    best = obj;
                }
            }
        }
        assert!(sol.objective <= best + 1e-4, "{} vs {best}", sol.objective);
    }

    #[test]
    fn fully_zero_bank_gives_zero_step() {
        let p = ProjectionProblem::new(
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(1, 2, &[-1.0, -1.0]),
            vec![-1.0],
            vec![1.0],
        )
        .unwrap();
        assert_eq!(solve_projection(&p).status, ProjectionStatus::ZeroStep);
    }

    #[test]
    fn handles_reference_on_the_boundary() {
        // g_ref = 0 and any movement increases g: only c = 0 is safe.
        let p = problem_1d(0.5, 0.0, 1.0);
        let sol = solve_projection(&p);
        assert!(p.max_violation(&sol.c) <= 1e-8);
        assert!(sol.c[0].abs() < 1e-6);
    }

    #[test]
    fn singular_gram_with_dependent_columns() {
        // d3 = d1 + d2 makes S singular
        let d = DMatrix::from_column_slice(2, 3, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let s = d.transpose() * &d;
        let g = DMatrix::from_row_slice(1, 3, &[-0.5, -0.5, 0.8]);
        let p = ProjectionProblem::new(s, g, vec![-1.0], vec![0.5]).unwrap();
        let sol = solve_projection(&p);
        assert_eq!(sol.status, ProjectionStatus::Projected);
        assert!(p.max_violation(&sol.c) <= 1e-8);
        assert!(sol.objective < p.objective(&[0.0, 0.0, 0.0]));
    }
}
