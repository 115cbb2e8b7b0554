//! Odometry drift from noisy horizontal accelerations.
//!
//! True accelerations are recovered from the ground-truth stream by central
//! differences, corrupted as `ã = (a + η)·ξ` with `η ~ N(0, σ²)` and
//! `ξ ~ N(1, σ²)` on x and y, and integrated from the true initial state.
//! Integration runs on the error `ã − a` with the same second-difference
//! scheme, which is algebraically identical to integrating `ã` directly but
//! makes zero noise reproduce the truth exactly. Altitude and attitude are
//! never corrupted.

use nalgebra::{Matrix3, Vector2, Vector3};
use nanomap::{RigidTransform, TimedPose};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::SimError;

/// Monte Carlo trials behind [`derive_edge_sigma`].
pub const DEFAULT_DRIFT_TRIALS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    /// Standard deviation used for both η (m/s²) and ξ (unitless).
    pub sigma_actual: f64,
    /// Pose stream rate, Hz.
    pub rate: f64,
    pub seed: u64,
}

impl DriftConfig {
    pub fn new(sigma_actual: f64, rate: f64, seed: u64) -> Self {
        Self { sigma_actual, rate, seed }
    }

    pub fn noiseless(rate: f64) -> Self {
        Self::new(0.0, rate, 0)
    }

    fn validate(&self) -> Result<(), SimError> {
        if !(self.sigma_actual >= 0.0 && self.sigma_actual.is_finite()) {
            return Err(SimError::InvalidDrift("sigma_actual must be finite and non-negative"));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(SimError::InvalidDrift("rate must be positive"));
        }
        Ok(())
    }
}

struct Noise {
    eta: Normal<f64>,
    xi: Normal<f64>,
    rng: ChaCha8Rng,
}

impl Noise {
    fn new(sigma: f64, rng: ChaCha8Rng) -> Self {
        Self {
            eta: Normal::new(0.0, sigma).expect("validated sigma"),
            xi: Normal::new(1.0, sigma).expect("validated sigma"),
            rng,
        }
    }

    /// `ã − a` for one horizontal axis.
    fn error(&mut self, a: f64) -> f64 {
        let eta = self.eta.sample(&mut self.rng);
        let xi = self.xi.sample(&mut self.rng);
        (a + eta) * xi - a
    }
}

/// Horizontal position error for every sample; `reset[k]` zeroes the error
/// state at sample k.
fn integrate_error(accel: &[Vector2<f64>], dt: f64, noise: &mut Noise, reset: impl Fn(usize) -> bool) -> Vec<Vector2<f64>> {
    let n = accel.len();
    let mut out = vec![Vector2::zeros(); n];
    let mut dp = Vector2::zeros();
    let mut dv = Vector2::zeros();
    for k in 1..n {
        if reset(k) {
            dp = Vector2::zeros();
            dv = Vector2::zeros();
        }
        out[k] = dp;
        if k + 1 < n {
            let e = Vector2::new(noise.error(accel[k].x), noise.error(accel[k].y));
            dv += e * dt;
            dp += dv * dt;
        }
    }
    out
}

fn check_rate(truth: &[TimedPose<f64>], rate: f64) -> Result<(), SimError> {
    if truth.len() < 3 {
        return Err(SimError::TooFewPoses { needed: 3, got: truth.len() });
    }
    let dt = 1.0 / rate;
    for (i, w) in truth.windows(2).enumerate() {
        if ((w[1].time - w[0].time) - dt).abs() > 1e-6 * dt.max(1.0) {
            return Err(SimError::IrregularRate {
                index: i + 1,
                time: w[1].time,
                rate,
            });
        }
    }
    Ok(())
}

pub fn corrupt_trajectory(truth: &[TimedPose<f64>], cfg: &DriftConfig) -> Result<Vec<TimedPose<f64>>, SimError> {
    corrupt_trajectory_with_resets(truth, cfg, &[])
}

/// [`corrupt_trajectory`] where the estimator is re-anchored to truth at each
/// time in `resets`: the accumulated position and velocity errors drop to
/// zero at the first sample at or after it.
pub fn corrupt_trajectory_with_resets(truth: &[TimedPose<f64>], cfg: &DriftConfig, resets: &[f64]) -> Result<Vec<TimedPose<f64>>, SimError> {
    cfg.validate()?;
    check_rate(truth, cfg.rate)?;
    if cfg.sigma_actual == 0.0 {
        return Ok(truth.to_vec());
    }
    let dt = 1.0 / cfg.rate;
    let mut accel = vec![Vector2::zeros(); truth.len()];
    for k in 1..truth.len() - 1 {
        let (a, b, c) = (truth[k - 1].pose.translation(), truth[k].pose.translation(), truth[k + 1].pose.translation());
        let d = (c - b * 2.0 + a) / (dt * dt);
        accel[k] = Vector2::new(d.x, d.y);
    }
    // First sample index at or after each reset time.
    let mut reset_at = vec![false; truth.len()];
    for &r in resets {
        let k = truth.partition_point(|p| p.time < r);
        if k < truth.len() {
            reset_at[k] = true;
        }
    }
    let mut noise = Noise::new(cfg.sigma_actual, ChaCha8Rng::seed_from_u64(cfg.seed));
    let err = integrate_error(&accel, dt, &mut noise, |k| reset_at[k]);
    Ok(truth
        .iter()
        .zip(&err)
        .map(|(p, e)| {
            let t = p.pose.translation() + Vector3::new(e.x, e.y, 0.0);
            TimedPose::new(p.time, RigidTransform::from_parts(*p.pose.rotation(), t))
        })
        .collect())
}

/// Horizontal drift reached after `window` seconds of hovering, one sample
/// per trial. Trial `i` draws from stream `i` of the seed's generator.
pub fn hover_drift_samples(cfg: &DriftConfig, window: f64, trials: usize) -> Result<Vec<Vector2<f64>>, SimError> {
    cfg.validate()?;
    let steps = (window * cfg.rate).round() as usize;
    if steps < 2 {
        return Err(SimError::TooFewPoses { needed: 3, got: steps + 1 });
    }
    let accel = vec![Vector2::zeros(); steps + 1];
    let dt = 1.0 / cfg.rate;
    Ok((0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let mut noise = Noise::new(cfg.sigma_actual, rng);
            integrate_error(&accel, dt, &mut noise, |_| false)[steps]
        })
        .collect())
}

/// Per-edge translation covariance: the Monte Carlo drift covariance over
/// `window` seconds divided by `history_len`. The z row and column are zero.
pub fn derive_edge_sigma(cfg: &DriftConfig, history_len: usize, window: f64) -> Result<Matrix3<f64>, SimError> {
    derive_edge_sigma_with_trials(cfg, history_len, window, DEFAULT_DRIFT_TRIALS)
}

pub fn derive_edge_sigma_with_trials(cfg: &DriftConfig, history_len: usize, window: f64, trials: usize) -> Result<Matrix3<f64>, SimError> {
    if history_len == 0 {
        return Err(SimError::InvalidDrift("history_len must be positive"));
    }
    if trials < 2 {
        return Err(SimError::InvalidDrift("at least two trials are required"));
    }
    if cfg.sigma_actual == 0.0 {
        cfg.validate()?;
        return Ok(Matrix3::zeros());
    }
    let samples = hover_drift_samples(cfg, window, trials)?;
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<Vector2<f64>>() / n;
    let cov = samples.iter().map(|s| (s - mean) * (s - mean).transpose()).sum::<nalgebra::Matrix2<f64>>() / (n - 1.0);
    let mut out = Matrix3::zeros();
    out.fixed_view_mut::<2, 2>(0, 0).copy_from(&(cov / history_len as f64));
    // Exact symmetry for the chain's validation.
    out[(1, 0)] = out[(0, 1)];
    Ok(out)
}
