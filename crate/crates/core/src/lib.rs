//! Local 3D mapping for motion planning without map fusion.
//!
//! Depth frames are kept in the coordinate frame they were captured in,
//! linked newest-to-oldest by relative transforms with Gaussian translation
//! noise. A query walks that chain until it finds a view that saw the queried
//! region, so the answer carries only the pose uncertainty accumulated since
//! that view, and pose corrections cost a handful of edge rewrites instead of
//! a map rebuild.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases.

pub mod chain;
pub mod geometry;
pub mod kdtree;
pub mod query;
pub mod scalar;

pub use chain::{ChainConfig, ChainError, FrameChain, Insertion, PoseIngest, PoseUpdateReport, SensorFrame, SharedFrameChain};
pub use geometry::{
    interpolate_in, interpolate_pose, one_sigma_aabb, transform_gaussian, Aabb, CameraModel, GaussianPoint, GeometryError, Projection, RigidTransform, TimedPose, TransformEdge,
};
pub use kdtree::{CloudError, KdTree, Neighbor, PointCloud};
pub use query::{is_in_fov, nanomap_query, neighbors_in_body_frame, query_batch, FovClassification, QueryConfig, QueryError, QueryResult, ViewIndex};
pub use scalar::Real;

pub type RigidTransformF64 = RigidTransform<f64>;
pub type TransformEdgeF64 = TransformEdge<f64>;
pub type GaussianPointF64 = GaussianPoint<f64>;
pub type CameraModelF64 = CameraModel<f64>;
pub type TimedPoseF64 = TimedPose<f64>;
pub type PointCloudF64 = PointCloud<f64>;
pub type KdTreeF64 = KdTree<f64>;
pub type SensorFrameF64 = SensorFrame<f64>;
pub type ChainConfigF64 = ChainConfig<f64>;
pub type FrameChainF64 = FrameChain<f64>;
pub type QueryResultF64 = QueryResult<f64>;

pub type RigidTransformF32 = RigidTransform<f32>;
pub type GaussianPointF32 = GaussianPoint<f32>;
pub type CameraModelF32 = CameraModel<f32>;
pub type PointCloudF32 = PointCloud<f32>;
pub type KdTreeF32 = KdTree<f32>;
pub type FrameChainF32 = FrameChain<f32>;
pub type QueryResultF32 = QueryResult<f32>;
