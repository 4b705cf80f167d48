//! Constrained policy optimization by sampling-based weight-space projection.

pub mod checkpoint;
pub mod control;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod net;
pub mod params;
pub mod projection;
pub mod tasks;
pub mod trainer;

pub use error::{Result, ScpoError};
pub use params::ParamVector;
