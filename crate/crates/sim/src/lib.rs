//! Synthetic flights for exercising a frame chain against ground truth.
//!
//! A [`World`] of boxes and spheres is seen by a ray-cast depth camera from
//! the true trajectory, while the chain is fed a drifted pose estimate.

pub mod drift;
pub mod presets;
pub mod replay;
pub mod scenario;
pub mod trajectory;
pub mod world;

use nanomap::{ChainError, CloudError, GeometryError, QueryError};
use thiserror::Error;

pub use drift::{corrupt_trajectory, corrupt_trajectory_with_resets, derive_edge_sigma, derive_edge_sigma_with_trials, hover_drift_samples, DriftConfig};
pub use replay::{Event, ReplayStats, Streams};
pub use scenario::{run_scenario, run_scenario_with_frames, QueryRecord, Scenario, ScenarioMetrics, ScenarioSpec};
pub use trajectory::{Trajectory, Waypoint};
pub use world::{render_depth, Shape, World};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("at least {needed} poses are required, got {got}")]
    TooFewPoses { needed: usize, got: usize },
    #[error("pose {index} at t = {time} breaks the {rate} Hz sampling")]
    IrregularRate { index: usize, time: f64, rate: f64 },
    #[error("invalid drift configuration: {0}")]
    InvalidDrift(&'static str),
    #[error("shape {index}: {reason}")]
    InvalidShape { index: usize, reason: &'static str },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
}
