//! TOML configuration. Every command-line flag has a key here; flags win.

use std::path::Path;

use anyhow::{Context, Result};
use nalgebra::Matrix3;
use nanomap::RigidTransform;
use serde::{Deserialize, Serialize};

use crate::logs::pose_from_record;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "NANOMAP_CONFIG";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub chain: ChainSection,
    pub bench: BenchSection,
    pub scenario: ScenarioSection,
}

/// Per-edge translation covariance: an isotropic variance or a row-major
/// 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EdgeSigma {
    Isotropic(f64),
    Matrix([f64; 9]),
}

impl EdgeSigma {
    pub fn matrix(&self) -> Matrix3<f64> {
        match *self {
            EdgeSigma::Isotropic(v) => Matrix3::identity() * v,
            EdgeSigma::Matrix(m) => Matrix3::from_row_slice(&m),
        }
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[3 * r + c] = m[(r, c)];
            }
        }
        EdgeSigma::Matrix(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSection {
    pub capacity: Option<usize>,
    pub k: Option<usize>,
    pub edge_sigma: Option<EdgeSigma>,
    /// Seconds between frames; scales the body-edge covariance.
    pub frame_period: Option<f64>,
    /// Sensor pose in the body frame as `tx ty tz qw qx qy qz`.
    pub mount: Option<[f64; 7]>,
    pub leaf_size: Option<usize>,
    pub occlusion_margin: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub trials: Option<usize>,
    pub warmup: Option<usize>,
    pub cols: Option<usize>,
    pub rows: Option<usize>,
    pub history: Option<usize>,
    pub n_queries: Option<Vec<usize>>,
    pub histories: Option<Vec<usize>>,
    pub history_queries: Option<usize>,
    pub n_poses: Option<Vec<usize>>,
    pub parallel: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    /// Preset name or path to a scenario TOML file.
    pub scenario: Option<String>,
    pub sigma: Option<f64>,
    pub seed: Option<u64>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {}", path.display(), one_line(&e.to_string())))
    }
}

pub fn mount_from(values: [f64; 7]) -> RigidTransform<f64> {
    pose_from_record([values[0], values[1], values[2]], [values[3], values[4], values[5], values[6]])
}

pub fn mount_to(pose: &RigidTransform<f64>) -> [f64; 7] {
    let (t, q) = (pose.translation(), pose.quaternion());
    [t.x, t.y, t.z, q.w, q.i, q.j, q.k]
}

/// Collapses a multi-line diagnostic onto one line.
pub fn one_line(s: &str) -> String {
    s.split('\n').map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ")
}
