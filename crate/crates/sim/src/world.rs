//! Static obstacle worlds and a ray-cast depth camera.

use nalgebra::Vector3;
use nanomap::{CameraModel, PointCloud, RigidTransform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::SimError;

/// Axis-aligned box or sphere, world frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Box { min: [f64; 3], max: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
}

impl Shape {
    pub fn cuboid(min: [f64; 3], max: [f64; 3]) -> Self {
        Shape::Box { min, max }
    }

    pub fn sphere(center: [f64; 3], radius: f64) -> Self {
        Shape::Sphere { center, radius }
    }

    fn validate(&self) -> Result<(), &'static str> {
        match *self {
            Shape::Box { min, max } => {
                if min.iter().chain(&max).any(|v| !v.is_finite()) {
                    return Err("non-finite corner");
                }
                if (0..3).any(|i| !(max[i] > min[i])) {
                    return Err("box must have positive extent on every axis");
                }
            }
            Shape::Sphere { center, radius } => {
                if center.iter().any(|v| !v.is_finite()) || !radius.is_finite() {
                    return Err("non-finite sphere");
                }
                if !(radius > 0.0) {
                    return Err("sphere radius must be positive");
                }
            }
        }
        Ok(())
    }

    /// Ray parameters of every surface crossing of `origin + t·dir`.
    fn crossings(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        match *self {
            Shape::Box { min, max } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for i in 0..3 {
                    if dir[i] == 0.0 {
                        if origin[i] < min[i] || origin[i] > max[i] {
                            return None;
                        }
                        continue;
                    }
                    let a = (min[i] - origin[i]) / dir[i];
                    let b = (max[i] - origin[i]) / dir[i];
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                (t0 <= t1).then_some((t0, t1))
            }
            Shape::Sphere { center, radius } => {
                let oc = origin - Vector3::from(center);
                let a = dir.norm_squared();
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                // Numerically stable root pair.
                let q = -(b + b.signum() * s);
                if q == 0.0 {
                    return Some((0.0, 0.0));
                }
                let (r0, r1) = (q / a, c / q);
                Some((r0.min(r1), r0.max(r1)))
            }
        }
    }

    /// Closest point of the solid to `p`; `p` itself when inside.
    pub fn closest_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        match *self {
            Shape::Box { min, max } => Vector3::new(p.x.clamp(min[0], max[0]), p.y.clamp(min[1], max[1]), p.z.clamp(min[2], max[2])),
            Shape::Sphere { center, radius } => {
                let c = Vector3::from(center);
                let d = p - c;
                let n = d.norm();
                if n <= radius {
                    *p
                } else {
                    c + d * (radius / n)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct World {
    shapes: Vec<Shape>,
}

impl World {
    pub fn new(shapes: Vec<Shape>) -> Result<Self, SimError> {
        for (index, s) in shapes.iter().enumerate() {
            s.validate().map_err(|reason| SimError::InvalidShape { index, reason })?;
        }
        Ok(Self { shapes })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    /// Nearest crossing with `t` in `[t_min, t_max]`.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, t_min: f64, t_max: f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        for s in &self.shapes {
            let Some((t0, t1)) = s.crossings(origin, dir) else {
                continue;
            };
            for t in [t0, t1] {
                if t >= t_min && t <= t_max && best.is_none_or(|b| t < b) {
                    best = Some(t);
                }
            }
        }
        best
    }

    /// Closest obstacle point to `p`, or `None` for an empty world.
    pub fn nearest_point(&self, p: &Vector3<f64>) -> Option<Vector3<f64>> {
        self.shapes
            .iter()
            .map(|s| s.closest_point(p))
            .min_by(|a, b| (a - p).norm_squared().total_cmp(&(b - p).norm_squared()))
    }

    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.nearest_point(p).map_or(f64::INFINITY, |q| (q - p).norm())
    }
}

/// Renders an organized cloud by casting one ray through each pixel center.
///
/// `camera_pose` maps sensor coordinates to world coordinates. Ray
/// directions have unit z, so the ray parameter is the depth and the range
/// limits apply to depth.
pub fn render_depth(world: &World, camera_pose: &RigidTransform<f64>, camera: &CameraModel<f64>) -> PointCloud<f64> {
    let (rows, cols) = (camera.rows(), camera.cols());
    let origin = *camera_pose.translation();
    let rot = camera_pose.rotation_matrix();
    let grid: Vec<Option<Vector3<f64>>> = (0..rows)
        .into_par_iter()
        .flat_map_iter(|r| {
            (0..cols).map(move |c| {
                let d = camera.ray_direction(c as f64 + 0.5, r as f64 + 0.5);
                let d = Vector3::new(d.x / d.z, d.y / d.z, 1.0);
                let t = world.cast(&origin, &(rot * d), camera.min_range(), camera.max_range())?;
                Some(Vector3::new(d.x * t, d.y * t, t))
            })
        })
        .collect();
    PointCloud::from_options(rows, cols, grid).expect("rendered depths lie inside the camera range")
}
