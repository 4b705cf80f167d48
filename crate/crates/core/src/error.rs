use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScpoError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("batch is empty")]
    EmptyBatch,

    #[error("reference parameters are not safe (max g = {max_g:e}); the safety induction is broken")]
    UnsafeReference { max_g: f64 },

    #[error("initial parameters are infeasible (max g = {max_g:e}); training requires g(theta_0) <= 0")]
    InitialInfeasible { max_g: f64 },

    #[error("Riccati iteration did not converge within {iterations} iterations; check that (A, B) is stabilizable")]
    DareNotConverged { iterations: usize },

    #[error("safety metric evaluation failed: {0}")]
    Metric(String),

    #[error("state grid is empty after filtering")]
    EmptyGrid,

    #[error("control batch sampler produced no retained trajectories after {retries} attempts")]
    EmptyControlBatch { retries: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("linear algebra: {0}")]
    LinAlg(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ScpoError>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(ScpoError::Dimension {
            what,
            expected,
            got,
        })
    }
}
