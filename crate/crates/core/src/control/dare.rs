use nalgebra::DMatrix;

use crate::error::{Result, ScpoError};

#[derive(Debug, Clone, PartialEq)]
pub struct DareSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub iterations: usize,
    /// Spectral radius of `A - B K`.
    pub spectral_radius: f64,
}

pub const DARE_TOLERANCE: f64 = 1e-12;
pub const DARE_MAX_ITERATIONS: usize = 100_000;

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn gain(a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let btp = b.transpose() * p;
    let h = r + &btp * b;
    let chol = h
        .cholesky()
        .ok_or_else(|| ScpoError::LinAlg("R + B^T P B is not positive definite".into()))?;
    Ok(chol.solve(&(btp * a)))
}

/// `P - (Q + A^T P A - A^T P B (R + B^T P B)^-1 B^T P A)`
pub fn riccati_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let k = gain(a, b, r, p)?;
    let atp = a.transpose() * p;
    let rhs = q + &atp * a - &atp * b * k;
    Ok(p - rhs)
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Fixed-point Riccati iteration from `P = Q` until the infinity-norm change
/// is at most [`DARE_TOLERANCE`]; `K = (R + B^T P B)^-1 B^T P A`.
pub fn solve_dare(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DareSolution> {
    let mut p = q.clone();
    for it in 1..=DARE_MAX_ITERATIONS {
        let k = gain(a, b, r, &p)?;
        let atp = a.transpose() * &p;
        let mut next = q + &atp * a - &atp * b * &k;
        next = (&next + next.transpose()) * 0.5;
        let change = inf_norm(&(&next - &p));
        p = next;
        if !change.is_finite() {
            break;
        }
        if change <= DARE_TOLERANCE {
            let k = gain(a, b, r, &p)?;
            let rho = spectral_radius(&(a - b * &k));
            if !(rho < 1.0) {
                return Err(ScpoError::LinAlg(format!(
                    "closed loop A - BK is not stable (spectral radius {rho}); check that (A, B) is stabilizable"
                )));
            }
            return Ok(DareSolution {
                p,
                k,
                iterations: it,
                spectral_radius: rho,
            });
        }
    }
    Err(ScpoError::DareNotConverged {
        iterations: DARE_MAX_ITERATIONS,
    })
}
