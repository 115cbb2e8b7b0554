//! The history of sensor views: a chain of (edge, frame) pairs, newest first,
//! fed by asynchronous pose, cloud and pose-correction streams.

use std::collections::VecDeque;
use std::sync::{Arc, RwLock};

use nalgebra::Matrix3;
use thiserror::Error;

use crate::geometry::{interpolate_in, validate_covariance, CameraModel, GeometryError, RigidTransform, TimedPose, TransformEdge};
use crate::kdtree::{KdTree, PointCloud, DEFAULT_LEAF_SIZE};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("pose at t={time} is older than the newest buffered pose t={newest}")]
    NonMonotonicPose { time: f64, newest: f64 },
    #[error("frame at t={time} is not newer than the newest frame t={newest}")]
    StaleFrame { time: f64, newest: f64 },
    #[error("frame at t={time} predates every buffered pose (oldest t={oldest})")]
    Unbracketed { time: f64, oldest: f64 },
    #[error("pose corrections must be strictly time-ordered (t={time} after t={previous})")]
    UnorderedCorrections { time: f64, previous: f64 },
    #[error("capacity must be at least 1")]
    ZeroCapacity,
    #[error("nominal frame period must be positive and finite")]
    InvalidFramePeriod,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Static configuration of a [`FrameChain`].
#[derive(Debug, Clone)]
pub struct ChainConfig<T: Real> {
    /// Maximum number of frames kept (`N`).
    pub capacity: usize,
    /// Translation covariance assigned to every inter-frame edge.
    pub edge_sigma: Matrix3<T>,
    /// Time over which `edge_sigma` accrues; scales the body edge covariance.
    pub nominal_frame_period: f64,
    /// Pose of the sensor in the body frame (maps sensor coordinates to body
    /// coordinates).
    pub sensor_mount: RigidTransform<T>,
    /// Camera used by [`FrameChain::add_cloud`].
    pub camera: CameraModel<T>,
    /// Clouds waiting for a bracketing pose; the oldest is dropped on overflow.
    pub pending_capacity: usize,
    /// Poses older than the oldest frame by more than this are discarded.
    pub pose_retention: f64,
    pub leaf_size: usize,
}

impl<T: Real> ChainConfig<T> {
    pub fn new(camera: CameraModel<T>) -> Self {
        Self {
            capacity: 150,
            edge_sigma: Matrix3::zeros(),
            nominal_frame_period: 1.0 / 30.0,
            sensor_mount: RigidTransform::identity(),
            camera,
            pending_capacity: 8,
            pose_retention: 1.0,
            leaf_size: DEFAULT_LEAF_SIZE,
        }
    }
}

/// One depth measurement together with its k-d tree.
#[derive(Debug, Clone)]
pub struct SensorFrame<T: Real> {
    timestamp: f64,
    cloud: PointCloud<T>,
    tree: KdTree<T>,
    camera: CameraModel<T>,
}

impl<T: Real> SensorFrame<T> {
    /// Builds the frame's k-d tree. Safe to run off the writer thread.
    pub fn new(timestamp: f64, cloud: PointCloud<T>, camera: CameraModel<T>) -> Self {
        Self::with_leaf_size(timestamp, cloud, camera, DEFAULT_LEAF_SIZE)
    }

    pub fn with_leaf_size(timestamp: f64, cloud: PointCloud<T>, camera: CameraModel<T>, leaf_size: usize) -> Self {
        let tree = KdTree::with_leaf_size(&cloud, leaf_size);
        Self {
            timestamp,
            cloud,
            tree,
            camera,
        }
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn cloud(&self) -> &PointCloud<T> {
        &self.cloud
    }

    pub fn tree(&self) -> &KdTree<T> {
        &self.tree
    }

    pub fn camera(&self) -> &CameraModel<T> {
        &self.camera
    }
}

#[derive(Debug, Clone)]
struct Vertex<T: Real> {
    frame: SensorFrame<T>,
    // Sensor pose in the world at the frame timestamp, as last interpolated
    // from the pose stream or a correction batch.
    world_pose: RigidTransform<T>,
    // T^{S_{i+1}}_{S_i}: maps this frame's coordinates into the next older
    // frame. `None` for the oldest frame.
    to_older: Option<TransformEdge<T>>,
}

/// Outcome of handing a frame to the chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Insertion {
    Inserted { evicted: bool },
    /// Parked until a pose at or after its timestamp arrives. `dropped` is the
    /// timestamp of a pending frame discarded to make room.
    Deferred { dropped: Option<f64> },
}

/// Outcome of a pose ingestion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PoseIngest {
    /// Pending frames that became interpolable and were inserted.
    pub frames_inserted: usize,
    pub frames_evicted: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PoseUpdateReport {
    /// Inter-frame edges recomputed.
    pub edges_rewritten: usize,
    pub body_edge_rewritten: bool,
}

/// Newest-first sequence of sensor frames linked by uncertain relative
/// transforms, plus the live body-to-newest-frame edge.
///
/// Insertion and eviction touch only the ends of the sequence; the ring
/// buffer is sized once so neither reallocates.
#[derive(Debug, Clone)]
pub struct FrameChain<T: Real> {
    config: ChainConfig<T>,
    vertices: VecDeque<Vertex<T>>,
    body_edge: Option<TransformEdge<T>>,
    poses: VecDeque<TimedPose<T>>,
    pending: VecDeque<(SensorFrame<T>, Option<Matrix3<T>>)>,
    link_operations: u64,
}

/// Chain shared between one writer and many query threads.
pub type SharedFrameChain<T> = Arc<RwLock<FrameChain<T>>>;

impl<T: Real> FrameChain<T> {
    pub fn new(config: ChainConfig<T>) -> Result<Self, ChainError> {
        if config.capacity == 0 {
            return Err(ChainError::ZeroCapacity);
        }
        if !(config.nominal_frame_period > 0.0 && config.nominal_frame_period.is_finite()) {
            return Err(ChainError::InvalidFramePeriod);
        }
        let edge_sigma = validate_covariance(&config.edge_sigma)?;
        let capacity = config.capacity;
        Ok(Self {
            config: ChainConfig { edge_sigma, ..config },
            vertices: VecDeque::with_capacity(capacity + 1),
            body_edge: None,
            poses: VecDeque::new(),
            pending: VecDeque::new(),
            link_operations: 0,
        })
    }

    pub fn into_shared(self) -> SharedFrameChain<T> {
        Arc::new(RwLock::new(self))
    }

    pub fn config(&self) -> &ChainConfig<T> {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.config.capacity
    }

    /// Frame `S_i`; `i = 0` is the newest.
    pub fn frame(&self, i: usize) -> Option<&SensorFrame<T>> {
        self.vertices.get(i).map(|v| &v.frame)
    }

    pub fn frames(&self) -> impl Iterator<Item = &SensorFrame<T>> + '_ {
        self.vertices.iter().map(|v| &v.frame)
    }

    /// Estimated world pose of sensor frame `i`.
    pub fn world_pose(&self, i: usize) -> Option<&RigidTransform<T>> {
        self.vertices.get(i).map(|v| &v.world_pose)
    }

    /// `T^{S_{i+1}}_{S_i}`, or `None` for the oldest frame.
    pub fn edge_to_older(&self, i: usize) -> Option<&TransformEdge<T>> {
        self.vertices.get(i).and_then(|v| v.to_older.as_ref())
    }

    /// `T^{S_0}_B`, available once a frame has been inserted.
    pub fn body_edge(&self) -> Option<&TransformEdge<T>> {
        self.body_edge.as_ref()
    }

    /// The edge a query crosses to reach frame `i`: the body edge for `i = 0`,
    /// otherwise the edge out of frame `i - 1`.
    pub fn edge_into(&self, i: usize) -> Option<&TransformEdge<T>> {
        if i == 0 {
            self.body_edge()
        } else if i < self.len() {
            self.edge_to_older(i - 1)
        } else {
            None
        }
    }

    pub fn poses(&self) -> &VecDeque<TimedPose<T>> {
        &self.poses
    }

    pub fn newest_pose(&self) -> Option<&TimedPose<T>> {
        self.poses.back()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Count of end insertions and removals performed on the frame sequence.
    pub fn link_operations(&self) -> u64 {
        self.link_operations
    }

    /// Ingests the newest body pose and refreshes the body edge. Pending
    /// frames that the pose brackets are inserted first.
    pub fn add_pose(&mut self, pose: TimedPose<T>) -> Result<PoseIngest, ChainError> {
        if let Some(last) = self.poses.back_mut() {
            if pose.time < last.time {
                return Err(ChainError::NonMonotonicPose {
                    time: pose.time,
                    newest: last.time,
                });
            }
            if pose.time == last.time {
                *last = pose;
            } else {
                self.poses.push_back(pose);
            }
        } else {
            self.poses.push_back(pose);
        }

        let mut report = PoseIngest::default();
        while let Some((frame, _)) = self.pending.front() {
            if frame.timestamp > pose.time {
                break;
            }
            let (frame, covariance) = self.pending.pop_front().unwrap();
            if self.interpolate_body(frame.timestamp).is_none() {
                // Arrived before the oldest pose; can never be placed.
                continue;
            }
            report.frames_inserted += 1;
            if self.insert_now(frame, covariance) {
                report.frames_evicted += 1;
            }
        }
        self.refresh_body_edge();
        self.prune_poses();
        Ok(report)
    }

    /// Builds the k-d tree for `cloud` with the configured camera and inserts
    /// the frame; see [`add_frame`](Self::add_frame).
    pub fn add_cloud(&mut self, timestamp: f64, cloud: PointCloud<T>) -> Result<Insertion, ChainError> {
        let frame = SensorFrame::with_leaf_size(timestamp, cloud, self.config.camera.clone(), self.config.leaf_size);
        self.add_frame(frame)
    }

    pub fn add_frame(&mut self, frame: SensorFrame<T>) -> Result<Insertion, ChainError> {
        self.add_frame_with_covariance(frame, None)
    }

    /// Inserts a frame whose edge to the previous frame carries `covariance`
    /// (e.g. supplied by a state estimator) instead of the configured
    /// `edge_sigma`.
    pub fn add_frame_with_covariance(&mut self, frame: SensorFrame<T>, covariance: Option<Matrix3<T>>) -> Result<Insertion, ChainError> {
        let covariance = covariance.map(|c| validate_covariance(&c)).transpose()?;
        let newest = self
            .pending
            .back()
            .map(|(f, _)| f.timestamp)
            .or_else(|| self.vertices.front().map(|v| v.frame.timestamp));
        if let Some(newest) = newest {
            if frame.timestamp <= newest {
                return Err(ChainError::StaleFrame {
                    time: frame.timestamp,
                    newest,
                });
            }
        }
        if let Some(oldest) = self.poses.front() {
            if frame.timestamp < oldest.time {
                return Err(ChainError::Unbracketed {
                    time: frame.timestamp,
                    oldest: oldest.time,
                });
            }
        }
        if self.pending.is_empty() && self.interpolate_body(frame.timestamp).is_some() {
            let evicted = self.insert_now(frame, covariance);
            self.refresh_body_edge();
            self.prune_poses();
            return Ok(Insertion::Inserted { evicted });
        }
        self.pending.push_back((frame, covariance));
        let dropped = if self.pending.len() > self.config.pending_capacity {
            self.pending.pop_front().map(|(f, _)| f.timestamp)
        } else {
            None
        };
        Ok(Insertion::Deferred { dropped })
    }

    /// Splices a batch of corrected world poses into the history. An edge is
    /// recomputed only when both of its frames fall inside the batch's time
    /// span; covariances are left as they were.
    pub fn apply_pose_updates(&mut self, corrections: &[TimedPose<T>]) -> Result<PoseUpdateReport, ChainError> {
        for pair in corrections.windows(2) {
            if !(pair[1].time > pair[0].time) {
                return Err(ChainError::UnorderedCorrections {
                    time: pair[1].time,
                    previous: pair[0].time,
                });
            }
        }
        let (Some(first), Some(last)) = (corrections.first(), corrections.last()) else {
            return Ok(PoseUpdateReport::default());
        };
        let (start, end) = (first.time, last.time);

        // Buffered poses inside the span are superseded by the batch.
        let lo = self.poses.partition_point(|p| p.time < start);
        let hi = self.poses.partition_point(|p| p.time <= end);
        let mut tail = self.poses.split_off(hi);
        self.poses.truncate(lo);
        self.poses.extend(corrections.iter().copied());
        self.poses.append(&mut tail);

        // Frames are newest first, so the covered ones form one contiguous run.
        let newest_covered = self.vertices.partition_point(|v| v.frame.timestamp > end);
        let oldest_covered = self.vertices.partition_point(|v| v.frame.timestamp >= start);
        let mount = self.config.sensor_mount;
        for v in self.vertices.range_mut(newest_covered..oldest_covered) {
            let body = interpolate_in(corrections, v.frame.timestamp).expect("frame inside correction span");
            v.world_pose = body.compose(&mount);
        }

        let mut report = PoseUpdateReport::default();
        for i in newest_covered..oldest_covered.saturating_sub(1) {
            let older = self.vertices[i + 1].world_pose;
            let v = &mut self.vertices[i];
            let covariance = *v
                .to_older
                .as_ref()
                .expect("non-oldest frame has an edge")
                .translation_covariance();
            v.to_older = Some(TransformEdge::from_trusted(
                older.inverse().compose(&v.world_pose),
                covariance,
            ));
            report.edges_rewritten += 1;
        }

        let now_covered = self.poses.back().is_some_and(|p| p.time >= start && p.time <= end);
        if newest_covered == 0 && oldest_covered > 0 && now_covered {
            self.refresh_body_edge();
            report.body_edge_rewritten = true;
        }
        Ok(report)
    }

    /// Drops the oldest frames until at most `new_capacity` remain, and keeps
    /// that as the capacity from now on.
    pub fn trim(&mut self, new_capacity: usize) -> Result<usize, ChainError> {
        if new_capacity == 0 {
            return Err(ChainError::ZeroCapacity);
        }
        self.config.capacity = new_capacity;
        let mut removed = 0;
        while self.vertices.len() > new_capacity {
            self.evict_oldest();
            removed += 1;
        }
        self.prune_poses();
        Ok(removed)
    }

    fn interpolate_body(&self, t: f64) -> Option<RigidTransform<T>> {
        let (a, b) = self.poses.as_slices();
        if b.is_empty() {
            return interpolate_in(a, t);
        }
        if a.last().is_some_and(|p| p.time >= t) {
            return interpolate_in(a, t);
        }
        if b.first().is_some_and(|p| p.time <= t) {
            return interpolate_in(b, t);
        }
        // Bracket straddles the ring buffer seam.
        let lo = a.last()?;
        let hi = b.first()?;
        crate::geometry::interpolate_pose(lo, hi, t).ok()
    }

    /// Returns whether the oldest frame was evicted.
    fn insert_now(&mut self, frame: SensorFrame<T>, covariance: Option<Matrix3<T>>) -> bool {
        let body = self
            .interpolate_body(frame.timestamp)
            .expect("caller checked the frame is bracketed");
        let world_pose = body.compose(&self.config.sensor_mount);
        let to_older = self.vertices.front().map(|older| {
            TransformEdge::from_trusted(
                older.world_pose.inverse().compose(&world_pose),
                covariance.unwrap_or(self.config.edge_sigma),
            )
        });
        self.vertices.push_front(Vertex {
            frame,
            world_pose,
            to_older,
        });
        self.link_operations += 1;
        if self.vertices.len() > self.config.capacity {
            self.evict_oldest();
            true
        } else {
            false
        }
    }

    fn evict_oldest(&mut self) {
        self.vertices.pop_back();
        self.link_operations += 1;
        if let Some(v) = self.vertices.back_mut() {
            v.to_older = None;
        }
    }

    fn refresh_body_edge(&mut self) {
        let (Some(front), Some(now)) = (self.vertices.front(), self.poses.back()) else {
            return;
        };
        let elapsed = (now.time - front.frame.timestamp).max(0.0);
        let scale = T::lit(elapsed / self.config.nominal_frame_period);
        self.body_edge = Some(TransformEdge::from_trusted(
            front.world_pose.inverse().compose(&now.pose),
            self.config.edge_sigma * scale,
        ));
    }

    fn prune_poses(&mut self) {
        let anchor = self
            .vertices
            .back()
            .map(|v| v.frame.timestamp)
            .into_iter()
            .chain(self.pending.front().map(|(f, _)| f.timestamp))
            .chain(self.poses.back().map(|p| p.time))
            .fold(f64::INFINITY, f64::min);
        let cutoff = anchor - self.config.pose_retention;
        // Keep the last pose at or before the cutoff so the window edge stays
        // interpolable.
        while self.poses.len() >= 2 && self.poses[1].time <= cutoff {
            self.poses.pop_front();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector3};

    fn camera() -> CameraModel<f64> {
        CameraModel::from_fov(8, 6, 1.5, 1.2, 0.2, 20.0).unwrap()
    }

    fn wall() -> PointCloud<f64> {
        let cam = camera();
        let mut pts = Vec::new();
        for r in 0..6 {
            for c in 0..8 {
                let d = cam.ray_direction(c as f64 + 0.5, r as f64 + 0.5);
                pts.push(d * 10.0);
            }
        }
        PointCloud::new(6, 8, pts, vec![true; 48]).unwrap()
    }

    fn config(capacity: usize) -> ChainConfig<f64> {
        ChainConfig {
            capacity,
            edge_sigma: Matrix3::identity() * 1e-4,
            ..ChainConfig::new(camera())
        }
    }

    fn pose_at(t: f64, x: f64) -> TimedPose<f64> {
        TimedPose::new(t, RigidTransform::from_translation(Vector3::new(x, 0.0, 0.0)))
    }

    #[test]
    fn coincident_pose_gives_identity_body_edge() {
        let mut chain = FrameChain::new(config(3)).unwrap();
        chain.add_pose(pose_at(0.0, 2.0)).unwrap();
        assert_eq!(chain.add_cloud(0.0, wall()).unwrap(), Insertion::Inserted { evicted: false });
        let edge = chain.body_edge().unwrap();
        assert!((edge.transform().translation()).norm() < 1e-12);
        assert_eq!(*edge.translation_covariance(), Matrix3::zeros());
        assert_eq!(chain.len(), 1);
        assert!(chain.edge_to_older(0).is_none());
    }

    #[test]
    fn body_edge_follows_vehicle_motion() {
        // T^{S0}_B = (T^W_{S0})⁻¹ · T^W_B: with identity mount and rotations,
        // a body displaced by +1 m in x sits at +1 m in the sensor frame.
        let mut chain = FrameChain::new(config(3)).unwrap();
        chain.add_pose(pose_at(0.0, 0.0)).unwrap();
        chain.add_cloud(0.0, wall()).unwrap();
        chain.add_pose(pose_at(0.1, 1.0)).unwrap();
        let edge = chain.body_edge().unwrap();
        assert!((edge.transform().translation() - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        // Covariance grows with elapsed time: 0.1 s / (1/30 s) = 3 periods.
        let expected = Matrix3::identity() * 3e-4;
        assert!((edge.translation_covariance() - expected).abs().max() < 1e-15);
    }

    #[test]
    fn body_edge_includes_sensor_mount() {
        let mount = RigidTransform::from_parts(
            Rotation3::from_axis_angle(&Vector3::y_axis(), std::f64::consts::FRAC_PI_2),
            Vector3::new(0.1, 0.0, 0.2),
        );
        let mut chain = FrameChain::new(ChainConfig {
            sensor_mount: mount,
            ..config(3)
        })
        .unwrap();
        chain.add_pose(pose_at(0.0, 0.0)).unwrap();
        chain.add_cloud(0.0, wall()).unwrap();
        let edge = chain.body_edge().unwrap().transform();
        let inv = mount.inverse();
        assert!((edge.rotation_matrix() - inv.rotation_matrix()).abs().max() < 1e-12);
        assert!((edge.translation() - inv.translation()).norm() < 1e-12);
    }

    #[test]
    fn pose_stream_grows_buffer_only() {
        let mut chain = FrameChain::new(config(3)).unwrap();
        for i in 0..100 {
            chain.add_pose(pose_at(i as f64 * 0.01, 0.0)).unwrap();
        }
        assert_eq!(chain.poses().len(), 100);
        assert!(chain.is_empty());
    }

    #[test]
    fn out_of_order_pose_rejected() {
        let mut chain = FrameChain::new(config(3)).unwrap();
        chain.add_pose(pose_at(1.0, 0.0)).unwrap();
        assert!(matches!(
            chain.add_pose(pose_at(0.5, 0.0)),
            Err(ChainError::NonMonotonicPose { .. })
        ));
    }

    #[test]
    fn capacity_evicts_oldest() {
        let mut chain = FrameChain::new(config(3)).unwrap();
        chain.add_pose(pose_at(0.0, 0.0)).unwrap();
        chain.add_pose(pose_at(1.0, 0.0)).unwrap();
        for i in 0..3 {
            chain.add_cloud(0.1 * i as f64, wall()).unwrap();
        }
        assert_eq!(chain.add_cloud(0.3, wall()).unwrap(), Insertion::Inserted { evicted: true });
        assert_eq!(chain.len(), 3);
        let stamps: Vec<f64> = chain.frames().map(|f| f.timestamp()).collect();
        assert_eq!(stamps, vec![0.3, 0.2, 0.1]);
        assert!(chain.edge_to_older(2).is_none());
    }

    #[test]
    fn stationary_edges_are_identity_with_edge_sigma() {
        let mut chain = FrameChain::new(config(3)).unwrap();
        chain.add_pose(pose_at(0.0, 4.0)).unwrap();
        chain.add_pose(pose_at(1.0, 4.0)).unwrap();
        chain.add_cloud(0.2, wall()).unwrap();
        chain.add_cloud(0.4, wall()).unwrap();
        let edge = chain.edge_to_older(0).unwrap();
        assert!(edge.transform().translation().norm() < 1e-12);
        assert_eq!(*edge.translation_covariance(), Matrix3::identity() * 1e-4);
    }

    #[test]
    fn stale_and_unbracketed_frames_rejected() {
        let mut chain = FrameChain::new(config(3)).unwrap();
        chain.add_pose(pose_at(1.0, 0.0)).unwrap();
        chain.add_pose(pose_at(2.0, 0.0)).unwrap();
        assert!(matches!(
            chain.add_cloud(0.5, wall()),
            Err(ChainError::Unbracketed { .. })
        ));
        chain.add_cloud(1.5, wall()).unwrap();
        assert!(matches!(
            chain.add_cloud(1.5, wall()),
            Err(ChainError::StaleFrame { .. })
        ));
    }

    #[test]
    fn early_clouds_wait_for_bracketing_pose() {
        let mut chain = FrameChain::new(config(5)).unwrap();
        chain.add_pose(pose_at(0.0, 0.0)).unwrap();
        assert_eq!(chain.add_cloud(0.05, wall()).unwrap(), Insertion::Deferred { dropped: None });
        assert_eq!(chain.add_cloud(0.08, wall()).unwrap(), Insertion::Deferred { dropped: None });
        assert!(chain.is_empty());
        let ingest = chain.add_pose(pose_at(0.1, 1.0)).unwrap();
        assert_eq!(ingest.frames_inserted, 2);
        assert_eq!(chain.len(), 2);
        assert_eq!(chain.pending_len(), 0);
        let w = chain.world_pose(0).unwrap();
        assert!((w.translation().x - 0.8).abs() < 1e-12);
    }

    #[test]
    fn pending_queue_overflow_drops_oldest() {
        let mut chain = FrameChain::new(ChainConfig {
            pending_capacity: 2,
            ..config(5)
        })
        .unwrap();
        chain.add_pose(pose_at(0.0, 0.0)).unwrap();
        chain.add_cloud(0.1, wall()).unwrap();
        chain.add_cloud(0.2, wall()).unwrap();
        assert_eq!(chain.add_cloud(0.3, wall()).unwrap(), Insertion::Deferred { dropped: Some(0.1) });
        chain.add_pose(pose_at(1.0, 0.0)).unwrap();
        let stamps: Vec<f64> = chain.frames().map(|f| f.timestamp()).collect();
        assert_eq!(stamps, vec![0.3, 0.2]);
    }

    fn five_frame_chain() -> FrameChain<f64> {
        let mut chain = FrameChain::new(config(10)).unwrap();
        for i in 0..=20 {
            let t = i as f64 * 0.1;
            chain.add_pose(pose_at(t, t)).unwrap();
            if i % 4 == 2 {
                chain.add_cloud(t, wall()).unwrap();
            }
        }
        assert_eq!(chain.len(), 5);
        chain
    }

    #[test]
    fn corrections_rewrite_only_fully_covered_edges() {
        let mut chain = five_frame_chain();
        let before: Vec<_> = (0..5).map(|i| chain.edge_to_older(i).copied()).collect();
        // Frames at 1.8 and 1.4 are covered, 1.0 is not.
        let corrections: Vec<_> = (0..=7).map(|i| pose_at(1.3 + 0.1 * i as f64, 5.0 + 0.2 * i as f64)).collect();
        let report = chain.apply_pose_updates(&corrections).unwrap();
        assert_eq!(report.edges_rewritten, 1);
        assert!(report.body_edge_rewritten);
        assert_ne!(chain.edge_to_older(0).copied(), before[0]);
        for i in 1..5 {
            assert_eq!(chain.edge_to_older(i).copied(), before[i]);
        }
        // Rewritten edge follows the corrected 0.2 m/0.1 s velocity.
        let t = chain.edge_to_older(0).unwrap().transform().translation();
        assert!((t.x - 0.8).abs() < 1e-9);
        assert_eq!(chain.edge_to_older(0).unwrap().translation_covariance(), before[0].unwrap().translation_covariance());
    }

    #[test]
    fn identical_corrections_are_a_fixed_point() {
        let mut chain = five_frame_chain();
        let before: Vec<_> = (0..5).map(|i| chain.edge_to_older(i).copied()).collect();
        let corrections: Vec<_> = chain.poses().iter().copied().collect();
        let report = chain.apply_pose_updates(&corrections).unwrap();
        assert_eq!(report.edges_rewritten, 4);
        for i in 0..5 {
            let (a, b) = (chain.edge_to_older(i), before[i].as_ref());
            match (a, b) {
                (Some(a), Some(b)) => {
                    assert!((a.transform().translation() - b.transform().translation()).norm() < 1e-12);
                }
                (None, None) => {}
                _ => panic!("edge presence changed"),
            }
        }
    }

    #[test]
    fn empty_corrections_are_a_noop() {
        let mut chain = five_frame_chain();
        assert_eq!(chain.apply_pose_updates(&[]).unwrap(), PoseUpdateReport::default());
        let bad = [pose_at(1.0, 0.0), pose_at(0.5, 0.0)];
        assert!(matches!(
            chain.apply_pose_updates(&bad),
            Err(ChainError::UnorderedCorrections { .. })
        ));
    }

    #[test]
    fn trim_removes_oldest() {
        let mut chain = five_frame_chain();
        assert_eq!(chain.trim(5).unwrap(), 0);
        assert_eq!(chain.trim(2).unwrap(), 3);
        let stamps: Vec<f64> = chain.frames().map(|f| f.timestamp()).collect();
        assert_eq!(stamps.len(), 2);
        assert!((stamps[0] - 1.8).abs() < 1e-9 && (stamps[1] - 1.4).abs() < 1e-9);
        assert!(chain.edge_to_older(1).is_none());
        assert_eq!(chain.trim(1).unwrap(), 1);
        assert_eq!(chain.len(), 1);
        assert_eq!(chain.trim(0), Err(ChainError::ZeroCapacity));
    }

    #[test]
    fn pose_buffer_is_pruned_behind_oldest_frame() {
        let mut chain = FrameChain::new(config(2)).unwrap();
        for i in 0..=500 {
            let t = i as f64 * 0.01;
            chain.add_pose(pose_at(t, 0.0)).unwrap();
            if i % 50 == 0 {
                chain.add_cloud(t, wall()).unwrap();
            }
        }
        // Frames at 4.5 and 5.0 remain; poses before 3.5 are gone.
        let oldest = chain.poses().front().unwrap().time;
        assert!((oldest - 3.5).abs() < 1e-9, "oldest pose {oldest}");
    }

    #[test]
    fn link_operations_constant_per_insertion() {
        let mut chain = FrameChain::new(config(4)).unwrap();
        chain.add_pose(pose_at(0.0, 0.0)).unwrap();
        chain.add_pose(pose_at(100.0, 0.0)).unwrap();
        let mut deltas = Vec::new();
        for i in 0..20 {
            let before = chain.link_operations();
            chain.add_cloud(i as f64, wall()).unwrap();
            deltas.push(chain.link_operations() - before);
        }
        assert!(deltas[..4].iter().all(|d| *d == 1));
        assert!(deltas[4..].iter().all(|d| *d == 2));
    }
}
