//! Scripted flight paths sampled into a ground-truth pose stream.

use nalgebra::{Matrix3, Rotation3, Vector3};
use nanomap::{RigidTransform, TimedPose};
use serde::{Deserialize, Serialize};

use crate::SimError;

pub const GRAVITY: f64 = 9.81;

/// A timed position the path passes through. Missing velocities are filled
/// Catmull-Rom style, and with zero at the two ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub time: f64,
    pub position: [f64; 3],
    #[serde(default)]
    pub velocity: Option<[f64; 3]>,
    /// Heading about world z, radians.
    #[serde(default)]
    pub yaw: f64,
}

impl Waypoint {
    pub fn new(time: f64, position: [f64; 3]) -> Self {
        Self {
            time,
            position,
            velocity: None,
            yaw: 0.0,
        }
    }

    pub fn with_velocity(mut self, v: [f64; 3]) -> Self {
        self.velocity = Some(v);
        self
    }

    pub fn with_yaw(mut self, yaw: f64) -> Self {
        self.yaw = yaw;
        self
    }
}

/// Piecewise cubic Hermite path with a quadrotor attitude: body z along the
/// thrust direction `a + g ẑ`, body x toward the heading.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    positions: Vec<Vector3<f64>>,
    velocities: Vec<Vector3<f64>>,
    yaws: Vec<f64>,
}

impl Trajectory {
    pub fn new(waypoints: &[Waypoint]) -> Result<Self, SimError> {
        if waypoints.len() < 2 {
            return Err(SimError::InvalidTrajectory("at least two waypoints are required".into()));
        }
        for (i, w) in waypoints.iter().enumerate() {
            if !w.time.is_finite() || w.position.iter().any(|v| !v.is_finite()) || !w.yaw.is_finite() {
                return Err(SimError::InvalidTrajectory(format!("waypoint {i} is not finite")));
            }
            if i > 0 && !(w.time > waypoints[i - 1].time) {
                return Err(SimError::InvalidTrajectory(format!("waypoint {i} does not advance in time")));
            }
        }
        let times: Vec<f64> = waypoints.iter().map(|w| w.time).collect();
        let positions: Vec<Vector3<f64>> = waypoints.iter().map(|w| Vector3::from(w.position)).collect();
        let n = waypoints.len();
        let velocities = (0..n)
            .map(|i| match waypoints[i].velocity {
                Some(v) => Vector3::from(v),
                None if i == 0 || i == n - 1 => Vector3::zeros(),
                None => (positions[i + 1] - positions[i - 1]) / (times[i + 1] - times[i - 1]),
            })
            .collect();
        Ok(Self {
            times,
            positions,
            velocities,
            yaws: waypoints.iter().map(|w| w.yaw).collect(),
        })
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Segment index and normalised parameter, clamped to the path.
    fn locate(&self, t: f64) -> (usize, f64, f64) {
        let t = t.clamp(self.start(), self.end());
        let i = self.times.partition_point(|&x| x <= t).saturating_sub(1).min(self.times.len() - 2);
        let h = self.times[i + 1] - self.times[i];
        (i, (t - self.times[i]) / h, h)
    }

    /// Position, velocity and acceleration at `t`.
    pub fn state(&self, t: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let (i, s, h) = self.locate(t);
        let (p0, p1) = (self.positions[i], self.positions[i + 1]);
        let (m0, m1) = (self.velocities[i] * h, self.velocities[i + 1] * h);
        let (s2, s3) = (s * s, s * s * s);
        let p = p0 * (2.0 * s3 - 3.0 * s2 + 1.0) + m0 * (s3 - 2.0 * s2 + s) + p1 * (-2.0 * s3 + 3.0 * s2) + m1 * (s3 - s2);
        let v = (p0 * (6.0 * s2 - 6.0 * s) + m0 * (3.0 * s2 - 4.0 * s + 1.0) + p1 * (-6.0 * s2 + 6.0 * s) + m1 * (3.0 * s2 - 2.0 * s)) / h;
        let a = (p0 * (12.0 * s - 6.0) + m0 * (6.0 * s - 4.0) + p1 * (6.0 - 12.0 * s) + m1 * (6.0 * s - 2.0)) / (h * h);
        (p, v, a)
    }

    pub fn yaw(&self, t: f64) -> f64 {
        let (i, s, _) = self.locate(t);
        self.yaws[i] + (self.yaws[i + 1] - self.yaws[i]) * s
    }

    pub fn attitude(&self, t: f64) -> Rotation3<f64> {
        let (_, _, a) = self.state(t);
        let z = (a + Vector3::new(0.0, 0.0, GRAVITY)).normalize();
        let yaw = self.yaw(t);
        let heading = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
        let y = z.cross(&heading).normalize();
        let x = y.cross(&z);
        Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]))
    }

    /// Body pose in the world (maps body coordinates to world coordinates).
    pub fn pose(&self, t: f64) -> RigidTransform<f64> {
        RigidTransform::from_parts(self.attitude(t), self.state(t).0)
    }

    /// Samples at `start + k / rate` for every such time within the path.
    pub fn sample(&self, rate: f64) -> Vec<TimedPose<f64>> {
        let n = ((self.end() - self.start()) * rate + 1e-9).floor() as usize;
        (0..=n)
            .map(|k| {
                let t = self.start() + k as f64 / rate;
                TimedPose::new(t, self.pose(t))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_passes_through_waypoints() {
        let traj = Trajectory::new(&[
            Waypoint::new(0.0, [0.0, 0.0, 1.0]),
            Waypoint::new(1.0, [2.0, 1.0, 1.0]),
            Waypoint::new(3.0, [4.0, 0.0, 2.0]),
        ])
        .unwrap();
        for (t, p) in [(0.0, [0.0, 0.0, 1.0]), (1.0, [2.0, 1.0, 1.0]), (3.0, [4.0, 0.0, 2.0])] {
            assert!((traj.state(t).0 - Vector3::from(p)).norm() < 1e-12);
        }
        assert!(traj.state(0.0).1.norm() < 1e-12);
        assert!(traj.state(3.0).1.norm() < 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let traj = Trajectory::new(&[
            Waypoint::new(0.0, [0.0, 0.0, 1.0]).with_velocity([1.0, 0.0, 0.0]),
            Waypoint::new(2.0, [3.0, 2.0, 1.5]),
            Waypoint::new(4.0, [5.0, 0.0, 1.0]),
        ])
        .unwrap();
        let h = 1e-5;
        for t in [0.3, 1.1, 2.7, 3.5] {
            let (p0, v, a) = traj.state(t);
            let (p1, v1, _) = traj.state(t + h);
            assert!(((p1 - p0) / h - v).norm() < 1e-3);
            assert!(((v1 - v) / h - a).norm() < 1e-3);
        }
    }

    #[test]
    fn level_hover_attitude_and_deceleration_pitch() {
        let hover = Trajectory::new(&[Waypoint::new(0.0, [0.0, 0.0, 1.0]), Waypoint::new(1.0, [0.0, 0.0, 1.0])]).unwrap();
        assert!((hover.attitude(0.5).matrix() - Matrix3::identity()).abs().max() < 1e-12);

        // Constant 4 m/s² braking along +x tilts the nose up by atan(4/g).
        let brake = Trajectory::new(&[
            Waypoint::new(0.0, [0.0, 0.0, 1.0]).with_velocity([6.0, 0.0, 0.0]),
            Waypoint::new(1.5, [4.5, 0.0, 1.0]).with_velocity([0.0, 0.0, 0.0]),
        ])
        .unwrap();
        let forward = brake.attitude(0.7) * Vector3::x();
        assert!((forward.z - (4.0f64 / GRAVITY).atan().sin()).abs() < 1e-9);
    }

    #[test]
    fn sampling_covers_the_span() {
        let traj = Trajectory::new(&[Waypoint::new(0.0, [0.0; 3]), Waypoint::new(2.0, [1.0, 0.0, 0.0])]).unwrap();
        let s = traj.sample(100.0);
        assert_eq!(s.len(), 201);
        assert_eq!(s[200].time, 2.0);
    }

    #[test]
    fn rejects_bad_waypoints() {
        assert!(Trajectory::new(&[Waypoint::new(0.0, [0.0; 3])]).is_err());
        assert!(Trajectory::new(&[Waypoint::new(1.0, [0.0; 3]), Waypoint::new(1.0, [0.0; 3])]).is_err());
    }
}
