use crate::error::Result;
use crate::params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmijoSettings {
    pub sigma: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for ArmijoSettings {
    fn default() -> Self {
        Self {
            sigma: 0.1,
            shrink: 0.5,
            max_backtracks: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmijoOutcome {
    /// Zero when no trial step satisfied the descent condition.
    pub alpha: f64,
    /// Loss at `theta + alpha * delta`.
    pub loss: f64,
    pub base_loss: f64,
    pub backtracks: usize,
}

/// Largest `alpha` in `{1, shrink, shrink^2, ..}` with
/// `loss(theta + alpha delta) <= loss(theta) - sigma alpha ||delta||^2`.
pub fn armijo_search<F>(
    mut loss: F,
    theta: &ParamVector,
    delta: &ParamVector,
    settings: &ArmijoSettings,
) -> Result<ArmijoOutcome>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    let base_loss = loss(theta)?;
    let n2 = delta.norm_sq();
    if n2 == 0.0 {
        return Ok(ArmijoOutcome {
            alpha: 0.0,
            loss: base_loss,
            base_loss,
            backtracks: 0,
        });
    }
    let mut alpha = 1.0;
    for backtracks in 0..=settings.max_backtracks {
        let mut trial = theta.clone();
        trial.axpy(alpha, delta);
        let value = loss(&trial)?;
        if value <= base_loss - settings.sigma * alpha * n2 {
            return Ok(ArmijoOutcome {
                alpha,
                loss: value,
                base_loss,
                backtracks,
            });
        }
        alpha *= settings.shrink;
    }
    Ok(ArmijoOutcome {
        alpha: 0.0,
        loss: base_loss,
        base_loss,
        backtracks: settings.max_backtracks,
    })
}
