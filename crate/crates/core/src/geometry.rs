//! Rigid transforms, Gaussian points, pinhole projection and bounding boxes.
//!
//! Sensor coordinates are right-down-forward: `+z` is the optical axis. Pixel
//! `(row, col)` covers `u ∈ [col, col + 1)`, `v ∈ [row, row + 1)`, so the image
//! spans `u ∈ [0, cols]`, `v ∈ [0, rows]`.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::scalar::Real;

/// Orthonormality and determinant tolerance for rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;
/// Symmetry and eigenvalue tolerance for covariance matrices.
pub const COVARIANCE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("matrix is not a proper rotation (deviation {0:e})")]
    NotARotation(f64),
    #[error("covariance is not symmetric (asymmetry {0:e})")]
    AsymmetricCovariance(f64),
    #[error("covariance is not positive semi-definite (eigenvalue {0:e})")]
    NotPositiveSemiDefinite(f64),
    #[error("covariance contains non-finite entries")]
    NonFiniteCovariance,
    #[error("invalid camera model: {0}")]
    InvalidCamera(&'static str),
    #[error("bounding box half-widths must be non-negative")]
    NegativeHalfWidth,
    #[error("interpolation requires start time {start} < end time {end}")]
    EmptyBracket { start: f64, end: f64 },
    #[error("interpolation time {t} outside [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
}

/// Rotation plus translation; maps `p` to `R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T: Real> {
    rotation: Rotation3<T>,
    translation: Vector3<T>,
}

impl<T: Real> Default for RigidTransform<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_parts(rotation: Rotation3<T>, translation: Vector3<T>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<T>) -> Self {
        Self::from_parts(Rotation3::identity(), translation)
    }

    pub fn from_quaternion(rotation: UnitQuaternion<T>, translation: Vector3<T>) -> Self {
        Self::from_parts(rotation.to_rotation_matrix(), translation)
    }

    /// Builds a transform from a raw 3×3 matrix, rejecting anything that is
    /// not orthonormal with determinant +1.
    pub fn from_matrix(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self, GeometryError> {
        let deviation = rotation_deviation(&rotation);
        if !(deviation <= T::tolerance(ROTATION_TOLERANCE)) {
            return Err(GeometryError::NotARotation(deviation.to_f64_lossy()));
        }
        Ok(Self::from_parts(
            Rotation3::from_matrix_unchecked(rotation),
            translation,
        ))
    }

    pub fn rotation(&self) -> &Rotation3<T> {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> &Matrix3<T> {
        self.rotation.matrix()
    }

    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    pub fn quaternion(&self) -> UnitQuaternion<T> {
        UnitQuaternion::from_rotation_matrix(&self.rotation)
    }

    pub fn apply(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rotation = self.rotation.inverse();
        Self {
            rotation,
            translation: -(rotation * self.translation),
        }
    }
}

impl<T: Real> std::ops::Mul for RigidTransform<T> {
    type Output = Self;

    fn mul(self, rhs: Self) -> Self {
        self.compose(&rhs)
    }
}

/// Max entry of `|RᵀR − I|` combined with `|det R − 1|`.
fn rotation_deviation<T: Real>(m: &Matrix3<T>) -> T {
    let gram = m.transpose() * m - Matrix3::identity();
    let ortho = gram.abs().max();
    ortho.max((m.determinant() - T::one()).abs())
}

/// Checks symmetry and positive semi-definiteness, returning the symmetrized
/// matrix.
pub fn validate_covariance<T: Real>(m: &Matrix3<T>) -> Result<Matrix3<T>, GeometryError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFiniteCovariance);
    }
    let scale = m.abs().max().max(T::one());
    let tol = T::tolerance(COVARIANCE_TOLERANCE) * scale;
    let asym = (m - m.transpose()).abs().max();
    if asym > tol {
        return Err(GeometryError::AsymmetricCovariance(asym.to_f64_lossy()));
    }
    let sym = symmetrize(m);
    let min_eig = sym.symmetric_eigenvalues().min();
    if min_eig < -tol {
        return Err(GeometryError::NotPositiveSemiDefinite(min_eig.to_f64_lossy()));
    }
    Ok(sym)
}

pub(crate) fn symmetrize<T: Real>(m: &Matrix3<T>) -> Matrix3<T> {
    (m + m.transpose()) * T::lit(0.5)
}

/// A rigid transform whose translation carries Gaussian uncertainty. The
/// rotation is treated as known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformEdge<T: Real> {
    transform: RigidTransform<T>,
    translation_covariance: Matrix3<T>,
}

impl<T: Real> TransformEdge<T> {
    pub fn new(transform: RigidTransform<T>, translation_covariance: Matrix3<T>) -> Result<Self, GeometryError> {
        Ok(Self {
            transform,
            translation_covariance: validate_covariance(&translation_covariance)?,
        })
    }

    pub fn deterministic(transform: RigidTransform<T>) -> Self {
        Self {
            transform,
            translation_covariance: Matrix3::zeros(),
        }
    }

    pub(crate) fn from_trusted(transform: RigidTransform<T>, translation_covariance: Matrix3<T>) -> Self {
        Self {
            transform,
            translation_covariance,
        }
    }

    pub fn transform(&self) -> &RigidTransform<T> {
        &self.transform
    }

    pub fn translation_covariance(&self) -> &Matrix3<T> {
        &self.translation_covariance
    }

    /// Pushes a Gaussian point through this edge; see [`transform_gaussian`].
    pub fn apply(&self, p: &GaussianPoint<T>) -> GaussianPoint<T> {
        transform_gaussian(self, p)
    }
}

/// A 3D point with Gaussian uncertainty `N(mean, covariance)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPoint<T: Real> {
    mean: Vector3<T>,
    covariance: Matrix3<T>,
}

impl<T: Real> GaussianPoint<T> {
    pub fn new(mean: Vector3<T>, covariance: Matrix3<T>) -> Result<Self, GeometryError> {
        Ok(Self {
            mean,
            covariance: validate_covariance(&covariance)?,
        })
    }

    pub fn deterministic(mean: Vector3<T>) -> Self {
        Self {
            mean,
            covariance: Matrix3::zeros(),
        }
    }

    /// Isotropic point with standard deviation `sigma` on every axis.
    pub fn isotropic(mean: Vector3<T>, sigma: T) -> Self {
        Self {
            mean,
            covariance: Matrix3::identity() * (sigma * sigma),
        }
    }

    pub fn mean(&self) -> &Vector3<T> {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix3<T> {
        &self.covariance
    }
}

/// Propagates a Gaussian point through an uncertain edge:
/// `mean' = R·mean + t`, `cov' = Σ_edge + R·Σ·Rᵀ`.
///
/// Translation noise and point noise are assumed independent, so their
/// covariances add.
pub fn transform_gaussian<T: Real>(edge: &TransformEdge<T>, p: &GaussianPoint<T>) -> GaussianPoint<T> {
    let r = edge.transform.rotation_matrix();
    let rotated = r * p.covariance * r.transpose();
    GaussianPoint {
        mean: edge.transform.apply(&p.mean),
        covariance: symmetrize(&(edge.translation_covariance + rotated)),
    }
}

/// Result of projecting a sensor-frame point through the intrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection<T: Real> {
    pub u: T,
    pub v: T,
    pub z: T,
}

/// Pinhole depth camera.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel<T: Real> {
    intrinsics: Matrix3<T>,
    intrinsics_inverse: Matrix3<T>,
    rows: usize,
    cols: usize,
    min_range: T,
    max_range: T,
    // Inward normals of the left, right, top and bottom frustum planes, all
    // through the origin: a point p is inside iff n·p ≥ 0 for each.
    lateral_planes: [Vector3<T>; 2],
    vertical_planes: [Vector3<T>; 2],
}

pub const DEFAULT_MIN_RANGE: f64 = 0.2;

impl<T: Real> CameraModel<T> {
    pub fn new(intrinsics: Matrix3<T>, rows: usize, cols: usize, min_range: T, max_range: T) -> Result<Self, GeometryError> {
        if rows == 0 || cols == 0 {
            return Err(GeometryError::InvalidCamera("resolution must be non-zero"));
        }
        if intrinsics.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidCamera("intrinsics must be finite"));
        }
        let k = &intrinsics;
        if !(k[(0, 0)] > T::zero() && k[(1, 1)] > T::zero()) {
            return Err(GeometryError::InvalidCamera("focal lengths must be positive"));
        }
        if k[(1, 0)] != T::zero() || k[(2, 0)] != T::zero() || k[(2, 1)] != T::zero() || k[(2, 2)] != T::one() {
            return Err(GeometryError::InvalidCamera("intrinsics must be upper triangular with K[2][2] = 1"));
        }
        let (cx, cy) = (k[(0, 2)], k[(1, 2)]);
        let width = T::from_usize(cols).unwrap();
        let height = T::from_usize(rows).unwrap();
        if cx < T::zero() || cx > width || cy < T::zero() || cy > height {
            return Err(GeometryError::InvalidCamera("principal point outside the image"));
        }
        if !(min_range > T::zero() && min_range < max_range && max_range.is_finite()) {
            return Err(GeometryError::InvalidCamera("require 0 < min_range < max_range"));
        }
        let intrinsics_inverse = intrinsics
            .try_inverse()
            .ok_or(GeometryError::InvalidCamera("intrinsics not invertible"))?;
        let row0 = intrinsics.row(0).transpose();
        let row1 = intrinsics.row(1).transpose();
        let lateral_planes = [row0, Vector3::new(T::zero(), T::zero(), width) - row0];
        let vertical_planes = [row1, Vector3::new(T::zero(), T::zero(), height) - row1];
        Ok(Self {
            intrinsics,
            intrinsics_inverse,
            rows,
            cols,
            min_range,
            max_range,
            lateral_planes,
            vertical_planes,
        })
    }

    /// Camera from field-of-view angles (radians) with the principal point at
    /// the image center.
    pub fn from_fov(cols: usize, rows: usize, horizontal_fov: T, vertical_fov: T, min_range: T, max_range: T) -> Result<Self, GeometryError> {
        let half = T::lit(0.5);
        let cx = T::from_usize(cols).unwrap() * half;
        let cy = T::from_usize(rows).unwrap() * half;
        let fx = cx / (horizontal_fov * half).tan();
        let fy = cy / (vertical_fov * half).tan();
        let z = T::zero();
        #[rustfmt::skip]
        let k = Matrix3::new(
            fx, z, cx,
            z, fy, cy,
            z, z, T::one(),
        );
        Self::new(k, rows, cols, min_range, max_range)
    }

    pub fn intrinsics(&self) -> &Matrix3<T> {
        &self.intrinsics
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn min_range(&self) -> T {
        self.min_range
    }

    pub fn max_range(&self) -> T {
        self.max_range
    }

    pub(crate) fn lateral_planes(&self) -> &[Vector3<T>; 2] {
        &self.lateral_planes
    }

    pub(crate) fn vertical_planes(&self) -> &[Vector3<T>; 2] {
        &self.vertical_planes
    }

    /// `(x, y, z) = K·p`, returned as `(x/z, y/z, z)`. `None` when `z = 0`.
    /// Points behind the camera (`z < 0`) are projected anyway.
    pub fn project(&self, p: &Vector3<T>) -> Option<Projection<T>> {
        let h = self.intrinsics * p;
        if h.z == T::zero() {
            return None;
        }
        Some(Projection {
            u: h.x / h.z,
            v: h.y / h.z,
            z: h.z,
        })
    }

    /// Inverse of [`project`](Self::project) for `z ≠ 0`.
    pub fn unproject(&self, u: T, v: T, z: T) -> Vector3<T> {
        self.intrinsics_inverse * Vector3::new(u * z, v * z, z)
    }

    /// Sensor-frame direction (z = 1) of the ray through image point `(u, v)`.
    pub fn ray_direction(&self, u: T, v: T) -> Vector3<T> {
        self.unproject(u, v, T::one())
    }

    /// Pixel `(row, col)` containing image point `(u, v)`. The far image
    /// border `u = cols` / `v = rows` is folded into the last pixel.
    pub fn pixel(&self, u: T, v: T) -> Option<(usize, usize)> {
        let width = T::from_usize(self.cols).unwrap();
        let height = T::from_usize(self.rows).unwrap();
        if !(u >= T::zero() && u <= width && v >= T::zero() && v <= height) {
            return None;
        }
        let col = u.floor().to_usize()?.min(self.cols - 1);
        let row = v.floor().to_usize()?.min(self.rows - 1);
        Some((row, col))
    }
}

/// Axis-aligned box given by center and non-negative half-widths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb<T: Real> {
    center: Vector3<T>,
    half_widths: Vector3<T>,
}

impl<T: Real> Aabb<T> {
    pub fn new(center: Vector3<T>, half_widths: Vector3<T>) -> Result<Self, GeometryError> {
        if half_widths.iter().any(|h| !(*h >= T::zero())) {
            return Err(GeometryError::NegativeHalfWidth);
        }
        Ok(Self { center, half_widths })
    }

    pub fn center(&self) -> &Vector3<T> {
        &self.center
    }

    pub fn half_widths(&self) -> &Vector3<T> {
        &self.half_widths
    }

    pub fn min(&self) -> Vector3<T> {
        self.center - self.half_widths
    }

    pub fn max(&self) -> Vector3<T> {
        self.center + self.half_widths
    }

    pub fn contains(&self, p: &Vector3<T>) -> bool {
        (p - self.center)
            .iter()
            .zip(self.half_widths.iter())
            .all(|(d, h)| d.abs() <= *h)
    }

    /// Smallest value of `n·p` over the box, attained at the corner most
    /// opposed to `n`.
    pub fn min_dot(&self, n: &Vector3<T>) -> T {
        n.dot(&self.center) - n.abs().dot(&self.half_widths)
    }

    pub fn max_dot(&self, n: &Vector3<T>) -> T {
        n.dot(&self.center) + n.abs().dot(&self.half_widths)
    }

    pub fn corners(&self) -> [Vector3<T>; 8] {
        let (c, h) = (self.center, self.half_widths);
        std::array::from_fn(|i| {
            let sx = if i & 1 == 0 { -h.x } else { h.x };
            let sy = if i & 2 == 0 { -h.y } else { h.y };
            let sz = if i & 4 == 0 { -h.z } else { h.z };
            c + Vector3::new(sx, sy, sz)
        })
    }
}

/// Tight axis-aligned box around the one-standard-deviation ellipsoid:
/// half-width `i` is `sqrt(Σ_ii)`.
pub fn one_sigma_aabb<T: Real>(p: &GaussianPoint<T>) -> Aabb<T> {
    let c = p.covariance();
    let half_widths = Vector3::new(c[(0, 0)], c[(1, 1)], c[(2, 2)]).map(|v| v.max(T::zero()).sqrt());
    Aabb {
        center: p.mean,
        half_widths,
    }
}

/// A world-frame pose stamped with a time in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose<T: Real> {
    pub time: f64,
    pub pose: RigidTransform<T>,
}

impl<T: Real> TimedPose<T> {
    pub fn new(time: f64, pose: RigidTransform<T>) -> Self {
        Self { time, pose }
    }
}

/// Pose at time `t` between two samples: linear in translation, constant
/// angular velocity in rotation. Never extrapolates.
pub fn interpolate_pose<T: Real>(a: &TimedPose<T>, b: &TimedPose<T>, t: f64) -> Result<RigidTransform<T>, GeometryError> {
    if !(a.time < b.time) {
        return Err(GeometryError::EmptyBracket {
            start: a.time,
            end: b.time,
        });
    }
    if !(t >= a.time && t <= b.time) {
        return Err(GeometryError::OutOfRange {
            t,
            start: a.time,
            end: b.time,
        });
    }
    if t == a.time {
        return Ok(a.pose);
    }
    if t == b.time {
        return Ok(b.pose);
    }
    let s = T::lit((t - a.time) / (b.time - a.time));
    let translation = a.pose.translation.lerp(&b.pose.translation, s);
    let delta = a.pose.rotation.inverse() * b.pose.rotation;
    let rotation = a.pose.rotation * delta.powf(s);
    Ok(RigidTransform::from_parts(rotation, translation))
}

/// Interpolates inside a time-sorted pose sequence. `None` outside its span.
pub fn interpolate_in<T: Real>(poses: &[TimedPose<T>], t: f64) -> Option<RigidTransform<T>> {
    let first = poses.first()?;
    let last = poses.last()?;
    if !(t >= first.time && t <= last.time) {
        return None;
    }
    let hi = poses.partition_point(|p| p.time < t);
    if poses[hi].time == t {
        return Some(poses[hi].pose);
    }
    interpolate_pose(&poses[hi - 1], &poses[hi], t).ok()
}
