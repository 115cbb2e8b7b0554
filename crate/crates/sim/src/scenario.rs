//! Scripted flights: ground truth, drifted estimates, rendered clouds and a
//! per-step query plan, replayed through a chain and scored against the
//! true world.

use std::sync::Arc;

use nalgebra::{Matrix3, Rotation3, Vector3};
use nanomap::{interpolate_in, neighbors_in_body_frame, query_batch, CameraModel, ChainConfig, FrameChain, GaussianPoint, PointCloud, QueryConfig, RigidTransform, TimedPose};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::{corrupt_trajectory_with_resets, derive_edge_sigma, DriftConfig};
use crate::replay::Streams;
use crate::trajectory::{Trajectory, Waypoint};
use crate::world::{render_depth, Shape, World};
use crate::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub cols: usize,
    pub rows: usize,
    pub horizontal_fov_deg: f64,
    pub vertical_fov_deg: f64,
    #[serde(default = "default_min_range")]
    pub min_range: f64,
    pub max_range: f64,
}

fn default_min_range() -> f64 {
    nanomap::geometry::DEFAULT_MIN_RANGE
}

impl CameraSpec {
    pub fn build(&self) -> Result<CameraModel<f64>, SimError> {
        Ok(CameraModel::from_fov(
            self.cols,
            self.rows,
            self.horizontal_fov_deg.to_radians(),
            self.vertical_fov_deg.to_radians(),
            self.min_range,
            self.max_range,
        )?)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSpec {
    pub sigma_actual: f64,
    pub seed: u64,
}

/// Translation covariance given to every chain edge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum EdgeSigmaSpec {
    #[default]
    Zero,
    /// `variance · I`.
    Isotropic { variance: f64 },
    /// Drift covariance over `window` seconds divided by `history_len`.
    Derived { window: f64, history_len: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorrectionSpec {
    #[default]
    None,
    /// Every `period` seconds the last `window` seconds of true poses are
    /// sent as a correction and the estimator is re-anchored to truth.
    SlidingWindow { period: f64, window: f64 },
    /// At the jump, the last `window` seconds of history are re-sent shifted
    /// by the jump so the history stays consistent with the new estimate.
    AtJump { window: f64 },
}

/// Step change of the pose estimate, as after a loop closure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseJump {
    pub time: f64,
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanFrame {
    /// Fixed in the body frame.
    Body,
    /// Gravity-aligned and yawed with the vehicle, as motion primitives are;
    /// rotated into the body frame at each step with the estimated attitude.
    #[default]
    Level,
    /// Fixed in the world, as a global plan is; mapped into the body frame
    /// at each step with the full estimated pose.
    World,
}

/// Grid of points along straight primitives: every combination of
/// distance, heading and height.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fan {
    pub distances: Vec<f64>,
    pub headings_deg: Vec<f64>,
    pub heights: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    #[serde(default)]
    pub frame: PlanFrame,
    /// Isotropic standard deviation of every sample, meters.
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub points: Vec<[f64; 3]>,
    #[serde(default)]
    pub fan: Option<Fan>,
}

impl SampleSpec {
    pub fn points(&self) -> Vec<Vector3<f64>> {
        let mut out: Vec<Vector3<f64>> = self.points.iter().map(|p| Vector3::from(*p)).collect();
        if let Some(fan) = &self.fan {
            for &d in &fan.distances {
                for &h in &fan.headings_deg {
                    let h = h.to_radians();
                    for &z in &fan.heights {
                        out.push(Vector3::new(d * h.cos(), d * h.sin(), z));
                    }
                }
            }
        }
        out
    }
}

/// Named time interval, for per-phase summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub name: String,
    pub start: f64,
    pub end: f64,
}

fn default_pose_rate() -> f64 {
    100.0
}
fn default_frame_rate() -> f64 {
    30.0
}
fn default_query_rate() -> f64 {
    10.0
}
fn default_capacity() -> usize {
    150
}
fn default_k() -> usize {
    1
}
fn default_bucket() -> f64 {
    1.0
}

/// Scenario description, loadable from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default)]
    pub world: Vec<Shape>,
    pub waypoints: Vec<Waypoint>,
    pub camera: CameraSpec,
    /// Camera position in the body frame. The camera looks along body +x
    /// with image x to the body's right.
    #[serde(default)]
    pub mount_offset: [f64; 3],
    #[serde(default = "default_pose_rate")]
    pub pose_rate: f64,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    #[serde(default = "default_query_rate")]
    pub query_rate: f64,
    #[serde(default = "default_capacity")]
    pub capacity: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Histogram bucket width, seconds.
    #[serde(default = "default_bucket")]
    pub bucket: f64,
    #[serde(default)]
    pub drift: DriftSpec,
    #[serde(default)]
    pub edge_sigma: EdgeSigmaSpec,
    #[serde(default)]
    pub corrections: CorrectionSpec,
    #[serde(default)]
    pub jump: Option<PoseJump>,
    pub samples: SampleSpec,
    #[serde(default)]
    pub phases: Vec<Phase>,
}

/// Rotation taking camera coordinates (x right, y down, z forward) to body
/// coordinates (x forward, y left, z up).
pub fn forward_camera_rotation() -> Rotation3<f64> {
    #[rustfmt::skip]
    let m = Matrix3::new(
        0.0, 0.0, 1.0,
        -1.0, 0.0, 0.0,
        0.0, -1.0, 0.0,
    );
    Rotation3::from_matrix_unchecked(m)
}

/// A built scenario ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub world: World,
    pub trajectory: Trajectory,
    /// True body poses at the pose rate.
    pub truth: Vec<TimedPose<f64>>,
    pub camera: CameraModel<f64>,
    pub mount: RigidTransform<f64>,
    pub drift: DriftConfig,
    pub edge_sigma: Matrix3<f64>,
    pub samples: Vec<Vector3<f64>>,
}

fn positive(name: &str, v: f64) -> Result<(), SimError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SimError::InvalidScenario(format!("{name} must be positive, got {v}")))
    }
}

impl Scenario {
    pub fn new(spec: ScenarioSpec) -> Result<Self, SimError> {
        positive("pose_rate", spec.pose_rate)?;
        positive("frame_rate", spec.frame_rate)?;
        positive("query_rate", spec.query_rate)?;
        positive("bucket", spec.bucket)?;
        if spec.capacity == 0 {
            return Err(SimError::InvalidScenario("capacity must be positive".into()));
        }
        if !(spec.samples.sigma >= 0.0 && spec.samples.sigma.is_finite()) {
            return Err(SimError::InvalidScenario("sample sigma must be non-negative".into()));
        }
        let world = World::new(spec.world.clone())?;
        let trajectory = Trajectory::new(&spec.waypoints)?;
        let truth = trajectory.sample(spec.pose_rate);
        let camera = spec.camera.build()?;
        let mount = RigidTransform::from_parts(forward_camera_rotation(), Vector3::from(spec.mount_offset));
        let drift = DriftConfig::new(spec.drift.sigma_actual, spec.pose_rate, spec.drift.seed);
        let edge_sigma = match spec.edge_sigma {
            EdgeSigmaSpec::Zero => Matrix3::zeros(),
            EdgeSigmaSpec::Isotropic { variance } => {
                if !(variance >= 0.0 && variance.is_finite()) {
                    return Err(SimError::InvalidScenario("edge variance must be non-negative".into()));
                }
                Matrix3::identity() * variance
            }
            EdgeSigmaSpec::Derived { window, history_len } => derive_edge_sigma(&drift, history_len, window)?,
        };
        let samples = spec.samples.points();
        Ok(Self {
            spec,
            world,
            trajectory,
            truth,
            camera,
            mount,
            drift,
            edge_sigma,
            samples,
        })
    }

    pub fn start(&self) -> f64 {
        self.truth[0].time
    }

    pub fn end(&self) -> f64 {
        self.truth.last().unwrap().time
    }

    fn ticks(&self, rate: f64, from: usize) -> Vec<f64> {
        let n = ((self.end() - self.start()) * rate + 1e-9).floor() as usize;
        (from..=n).map(|k| self.start() + k as f64 / rate).collect()
    }

    pub fn frame_times(&self) -> Vec<f64> {
        self.ticks(self.spec.frame_rate, 0)
    }

    /// Query steps start one period in.
    pub fn query_times(&self) -> Vec<f64> {
        self.ticks(self.spec.query_rate, 1)
    }

    /// True sensor pose at `t`, identical to what a drift-free chain
    /// computes for a frame stamped `t`.
    pub fn true_sensor_pose(&self, t: f64) -> RigidTransform<f64> {
        interpolate_in(&self.truth, t).expect("time inside the trajectory").compose(&self.mount)
    }

    pub fn true_body_pose(&self, t: f64) -> RigidTransform<f64> {
        interpolate_in(&self.truth, t).expect("time inside the trajectory")
    }

    /// Clouds rendered from the true sensor poses at the frame rate.
    pub fn render_frames(&self) -> Vec<(f64, Arc<PointCloud<f64>>)> {
        self.frame_times()
            .into_iter()
            .map(|t| (t, Arc::new(render_depth(&self.world, &self.true_sensor_pose(t), &self.camera))))
            .collect()
    }

    fn correction_times(&self) -> Vec<f64> {
        match self.spec.corrections {
            CorrectionSpec::SlidingWindow { period, .. } if period > 0.0 => self.ticks(1.0 / period, 1),
            CorrectionSpec::AtJump { .. } => self.spec.jump.map(|j| j.time).into_iter().collect(),
            _ => Vec::new(),
        }
    }

    /// Pose stream the chain receives: drifted truth, re-anchored at each
    /// sliding-window correction, shifted after a jump.
    pub fn estimated_poses(&self) -> Result<Vec<TimedPose<f64>>, SimError> {
        let resets = match self.spec.corrections {
            CorrectionSpec::SlidingWindow { .. } => self.correction_times(),
            _ => Vec::new(),
        };
        let mut est = corrupt_trajectory_with_resets(&self.truth, &self.drift, &resets)?;
        if let Some(jump) = self.spec.jump {
            let offset = Vector3::from(jump.offset);
            for p in est.iter_mut().filter(|p| p.time >= jump.time) {
                p.pose = RigidTransform::from_parts(*p.pose.rotation(), p.pose.translation() + offset);
            }
        }
        Ok(est)
    }

    /// Body-frame sample set for a vehicle with estimated pose `est`.
    pub fn samples_at(&self, est: &RigidTransform<f64>) -> Vec<GaussianPoint<f64>> {
        let sigma = self.spec.samples.sigma;
        let to_body = match self.spec.samples.frame {
            PlanFrame::Body => RigidTransform::identity(),
            PlanFrame::Level => {
                let x = est.rotation() * Vector3::x();
                let yaw = x.y.atan2(x.x);
                RigidTransform::from_parts(est.rotation().inverse() * Rotation3::from_axis_angle(&Vector3::z_axis(), yaw), Vector3::zeros())
            }
            PlanFrame::World => est.inverse(),
        };
        self.samples.iter().map(|p| GaussianPoint::isotropic(to_body.apply(p), sigma)).collect()
    }

    /// All four input streams, reusing `frames` from [`render_frames`](Self::render_frames).
    pub fn streams(&self, frames: &[(f64, Arc<PointCloud<f64>>)]) -> Result<Streams, SimError> {
        let poses = self.estimated_poses()?;
        let corrections = self
            .correction_times()
            .into_iter()
            .map(|t| {
                let batch: Vec<TimedPose<f64>> = match self.spec.corrections {
                    CorrectionSpec::SlidingWindow { window, .. } => self.truth.iter().filter(|p| p.time >= t - window && p.time <= t).copied().collect(),
                    CorrectionSpec::AtJump { window } => {
                        let offset = self.spec.jump.map_or(Vector3::zeros(), |j| Vector3::from(j.offset));
                        poses
                            .iter()
                            .filter(|p| p.time >= t - window && p.time <= t)
                            .map(|p| {
                                let shift = if p.time >= t { Vector3::zeros() } else { offset };
                                TimedPose::new(p.time, RigidTransform::from_parts(*p.pose.rotation(), p.pose.translation() + shift))
                            })
                            .collect()
                    }
                    CorrectionSpec::None => Vec::new(),
                };
                (t, batch)
            })
            .filter(|(_, b)| !b.is_empty())
            .collect();
        let queries = self
            .query_times()
            .into_iter()
            .map(|t| {
                let est = interpolate_in(&poses, t).expect("query inside the trajectory");
                (t, self.samples_at(&est))
            })
            .collect();
        Ok(Streams {
            poses,
            clouds: frames.to_vec(),
            corrections,
            queries,
        })
    }

    pub fn chain_config(&self) -> ChainConfig<f64> {
        ChainConfig {
            capacity: self.spec.capacity,
            edge_sigma: self.edge_sigma,
            nominal_frame_period: 1.0 / self.spec.frame_rate,
            sensor_mount: self.mount,
            ..ChainConfig::new(self.camera.clone())
        }
    }

    /// Closest approach of the true path to any obstacle.
    pub fn gamma(&self) -> f64 {
        self.truth
            .iter()
            .map(|p| self.world.distance(p.pose.translation()))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Outcome of one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryRecord {
    pub time: f64,
    pub step: usize,
    /// Position in the step's sample set.
    pub query_id: usize,
    pub search_depth: usize,
    /// `None` when the query fell out of known space.
    pub frame_index: Option<usize>,
    /// Distance between the nearest returned neighbour and the true nearest
    /// obstacle point, both in the true body frame; `None` without a
    /// neighbour or obstacle.
    pub error: Option<f64>,
    /// Distance between the world sample and the query mean in the answering
    /// frame mapped back to the world through that frame's true pose.
    pub round_trip: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMetrics {
    pub records: Vec<QueryRecord>,
    /// `depth_histogram[bucket][depth]`, depth in `1..=capacity`.
    pub depth_histogram: Vec<Vec<u64>>,
    pub bucket: f64,
    pub start: f64,
    pub gamma: f64,
}

impl ScenarioMetrics {
    pub fn total_queries(&self) -> usize {
        self.records.len()
    }

    /// Share of queries issued in `[from, to)` that satisfy `pred`; `None`
    /// when there are none.
    pub fn fraction_where(&self, range: Option<(f64, f64)>, pred: impl Fn(&QueryRecord) -> bool) -> Option<f64> {
        let (mut hit, mut n) = (0usize, 0usize);
        for r in &self.records {
            if range.is_some_and(|(a, b)| r.time < a || r.time >= b) {
                continue;
            }
            n += 1;
            hit += usize::from(pred(r));
        }
        (n > 0).then(|| hit as f64 / n as f64)
    }

    pub fn fraction_at_depth_one(&self) -> f64 {
        self.fraction_where(None, |r| r.search_depth == 1).unwrap_or(0.0)
    }

    pub fn fraction_within_depth(&self, depth: usize) -> f64 {
        self.fraction_where(None, |r| r.search_depth <= depth).unwrap_or(0.0)
    }

    pub fn mean_error(&self) -> Option<f64> {
        let errs: Vec<f64> = self.records.iter().filter_map(|r| r.error).collect();
        (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
    }

    pub fn max_round_trip(&self) -> f64 {
        self.records.iter().map(|r| r.round_trip).fold(0.0, f64::max)
    }
}

/// Renders the scenario and runs it.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioMetrics, SimError> {
    let frames = scenario.render_frames();
    run_scenario_with_frames(scenario, &frames)
}

/// Runs a scenario on pre-rendered clouds, so noise sweeps over one truth
/// trajectory render only once.
pub fn run_scenario_with_frames(scenario: &Scenario, frames: &[(f64, Arc<PointCloud<f64>>)]) -> Result<ScenarioMetrics, SimError> {
    let streams = scenario.streams(frames)?;
    let mut chain = FrameChain::new(scenario.chain_config())?;
    let config = QueryConfig::default();
    let k = scenario.spec.k;
    let bucket = scenario.spec.bucket;
    let start = scenario.start();
    let n_buckets = ((scenario.end() - start) / bucket).floor() as usize + 1;
    let mut histogram = vec![vec![0u64; scenario.spec.capacity + 1]; n_buckets];
    let mut records = Vec::new();

    streams.replay(&mut chain, |step, t, chain: &FrameChain<f64>, queries: &[GaussianPoint<f64>]| -> Result<(), SimError> {
        if chain.is_empty() {
            return Ok(());
        }
        let results = query_batch(chain, queries, k, &config, true)?;
        let body_true = scenario.true_body_pose(t);
        let world_true_inv = body_true.inverse();
        let scored: Vec<QueryRecord> = results
            .par_iter()
            .zip(queries.par_iter())
            .enumerate()
            .map(|(query_id, (res, q))| -> Result<QueryRecord, SimError> {
                let sample_world = body_true.apply(q.mean());
                let frame_time = chain.frame(res.data_frame()).expect("answering frame").timestamp();
                let back = scenario.true_sensor_pose(frame_time).apply(res.query_in_frame.mean());
                let error = match (neighbors_in_body_frame(chain, res)?.first(), scenario.world.nearest_point(&sample_world)) {
                    (Some(n), Some(gt)) => Some((n - world_true_inv.apply(&gt)).norm()),
                    _ => None,
                };
                Ok(QueryRecord {
                    time: t,
                    step,
                    query_id,
                    search_depth: res.search_depth,
                    frame_index: res.frame_index(),
                    error,
                    round_trip: (back - sample_world).norm(),
                })
            })
            .collect::<Result<_, _>>()?;
        for r in &scored {
            let b = (((t - start) / bucket).floor() as usize).min(n_buckets - 1);
            histogram[b][r.search_depth.min(scenario.spec.capacity)] += 1;
        }
        records.extend(scored);
        Ok(())
    })?;

    Ok(ScenarioMetrics {
        records,
        depth_histogram: histogram,
        bucket,
        start,
        gamma: scenario.gamma(),
    })
}
