//! Timing harness for query cost and pose-update cost, chain against the
//! fused voxel map.
//!
//! Each measurement runs `warmup` discarded trials and then `trials`
//! recorded ones on a monotonic clock. Setup that is not part of the
//! measured operation (cloning inputs, feeding poses) happens off the clock.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use nalgebra::Vector3;
use nanomap::{query_batch, ChainConfig, FrameChain, GaussianPoint, PointCloud, QueryConfig, RigidTransform, TimedPose};
use nanomap::{interpolate_in, CameraModel};
use nanomap_baseline::{VoxelMap, VoxelMapConfig};
use nanomap_sim::{render_depth, Scenario, ScenarioSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const DEFAULT_TRIALS: usize = 10;
pub const DEFAULT_WARMUP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trials {
    pub warmup: usize,
    pub trials: usize,
    /// Fan queries out over threads instead of answering them in order.
    pub parallel: bool,
}

impl Default for Trials {
    fn default() -> Self {
        Self {
            warmup: DEFAULT_WARMUP,
            trials: DEFAULT_TRIALS,
            parallel: false,
        }
    }
}

/// One recorded trial. `work` counts the units the operation processed
/// (frames searched, edges rewritten, clouds re-fused) and is deterministic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BenchRow {
    pub experiment: String,
    pub parameter: usize,
    pub trial: usize,
    pub wall_time_ns: u64,
    pub work: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub parameter: usize,
    pub trials: usize,
    pub mean_ns: f64,
    /// Standard error of the mean.
    pub stderr_ns: f64,
}

/// Mean and standard error per (experiment, parameter), in first-seen order.
pub fn summarize(rows: &[BenchRow]) -> Vec<Summary> {
    let mut keys: Vec<(&str, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.experiment.as_str(), r.parameter)) {
            keys.push((r.experiment.as_str(), r.parameter));
        }
    }
    keys.into_iter()
        .map(|(e, p)| {
            let t: Vec<f64> = rows.iter().filter(|r| r.experiment == e && r.parameter == p).map(|r| r.wall_time_ns as f64).collect();
            let n = t.len() as f64;
            let mean = t.iter().sum::<f64>() / n;
            let stderr = if t.len() > 1 { (t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt() } else { 0.0 };
            Summary {
                experiment: e.to_string(),
                parameter: p,
                trials: t.len(),
                mean_ns: mean,
                stderr_ns: stderr,
            }
        })
        .collect()
}

pub fn write_rows<W: Write>(w: W, rows: &[BenchRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r)?;
    }
    if rows.is_empty() {
        csv.write_record(["experiment", "parameter", "trial", "wall_time_ns", "work"])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(w: W, summary: &[Summary]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for s in summary {
        csv.serialize(s)?;
    }
    if summary.is_empty() {
        csv.write_record(["experiment", "parameter", "trials", "mean_ns", "stderr_ns"])?;
    }
    csv.flush()?;
    Ok(())
}

/// Runs `op` through the warm-up and recorded trials. `op` gets the trial
/// number (warm-ups count from zero too) and returns the elapsed time and
/// its work count.
fn measure(experiment: &str, parameter: usize, trials: &Trials, rows: &mut Vec<BenchRow>, mut op: impl FnMut(usize) -> Result<(u64, u64)>) -> Result<()> {
    for i in 0..trials.warmup {
        op(i)?;
    }
    for trial in 0..trials.trials {
        let (wall_time_ns, work) = op(trials.warmup + trial)?;
        rows.push(BenchRow {
            experiment: experiment.to_string(),
            parameter,
            trial,
            wall_time_ns,
            work,
        });
    }
    Ok(())
}

fn elapsed_ns(start: Instant) -> u64 {
    start.elapsed().as_nanos() as u64
}

/// Rendered frames and true poses of a scenario, used as benchmark input.
#[derive(Debug, Clone)]
pub struct BenchScene {
    pub camera: CameraModel<f64>,
    pub mount: RigidTransform<f64>,
    pub poses: Vec<TimedPose<f64>>,
    pub frames: Vec<(f64, Arc<PointCloud<f64>>)>,
}

impl BenchScene {
    /// Renders the first `frames` frames of `spec` at `cols × rows`.
    pub fn render(mut spec: ScenarioSpec, cols: usize, rows: usize, frames: usize) -> Result<Self> {
        spec.camera.cols = cols;
        spec.camera.rows = rows;
        let scenario = Scenario::new(spec)?;
        let times = scenario.frame_times();
        if times.len() < frames {
            bail!("scenario '{}' has {} frames, the benchmark needs {frames}", scenario.spec.name, times.len());
        }
        let frames = times[..frames]
            .iter()
            .map(|&t| (t, Arc::new(render_depth(&scenario.world, &scenario.true_sensor_pose(t), &scenario.camera))))
            .collect();
        Ok(Self {
            camera: scenario.camera.clone(),
            mount: scenario.mount,
            poses: scenario.truth.clone(),
            frames,
        })
    }

    pub fn body_pose(&self, t: f64) -> RigidTransform<f64> {
        interpolate_in(&self.poses, t).expect("frame time inside the trajectory")
    }

    pub fn chain_config(&self, capacity: usize) -> ChainConfig<f64> {
        ChainConfig {
            capacity,
            sensor_mount: self.mount,
            nominal_frame_period: self.frames.get(1).map_or(1.0 / 30.0, |f| f.0 - self.frames[0].0),
            ..ChainConfig::new(self.camera.clone())
        }
    }

    /// Feeds poses through the first one at or after `t`, so a frame at `t`
    /// is bracketed and inserted at once.
    fn feed_poses_until(&self, chain: &mut FrameChain<f64>, next_pose: &mut usize, t: f64) -> Result<()> {
        while *next_pose < self.poses.len() && (*next_pose == 0 || self.poses[*next_pose - 1].time < t) {
            chain.add_pose(self.poses[*next_pose])?;
            *next_pose += 1;
        }
        Ok(())
    }

    /// Chain holding frames `0..count`, with poses fed up to the newest.
    /// Returns the index of the next unfed pose too.
    pub fn chain(&self, capacity: usize, count: usize) -> Result<(FrameChain<f64>, usize)> {
        let mut chain = FrameChain::new(self.chain_config(capacity))?;
        let mut next_pose = 0;
        for (t, cloud) in &self.frames[..count] {
            self.feed_poses_until(&mut chain, &mut next_pose, *t)?;
            chain.add_cloud(*t, PointCloud::clone(cloud))?;
        }
        Ok((chain, next_pose))
    }

    /// Voxel map with frames `0..count` fused at their true sensor poses.
    pub fn baseline(&self, count: usize) -> Result<VoxelMap> {
        let mut map = VoxelMap::new(VoxelMapConfig {
            sensor_mount: self.mount,
            ..VoxelMapConfig::default()
        })?;
        for (t, cloud) in &self.frames[..count] {
            map.fuse(*t, Arc::clone(cloud), self.body_pose(*t).compose(&self.mount));
        }
        Ok(map)
    }

    /// `n` body-frame queries just in front of surfaces the frame at `index`
    /// saw, for a vehicle at that frame's pose.
    pub fn visible_queries(&self, index: usize, n: usize) -> Vec<GaussianPoint<f64>> {
        let cloud = &self.frames[index].1;
        let valid: Vec<usize> = cloud.valid_points().map(|(i, _)| i).collect();
        if valid.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|i| {
                let p = cloud.at_index(valid[(i * 7919) % valid.len()]).expect("valid index");
                GaussianPoint::isotropic(self.mount.apply(&(p * 0.9)), 0.01)
            })
            .collect()
    }
}

/// Body-frame queries far overhead, beyond range of every view, so each
/// walks the whole history.
pub fn unseen_queries(n: usize, seed: u64) -> Vec<GaussianPoint<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| GaussianPoint::isotropic(Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(12.0..14.0)), 0.05))
        .collect()
}

fn run_queries(chain: &FrameChain<f64>, queries: &[GaussianPoint<f64>], parallel: bool) -> Result<u64> {
    let results = query_batch(chain, queries, 1, &QueryConfig::default(), parallel)?;
    Ok(results.iter().map(|r| r.search_depth as u64).sum())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryBench {
    pub history: usize,
    pub n_queries: Vec<usize>,
    pub histories: Vec<usize>,
    /// Queries per trial in the history sweep.
    pub history_queries: usize,
}

impl Default for QueryBench {
    fn default() -> Self {
        Self {
            history: 150,
            n_queries: vec![0, 100, 500, 1000, 2500],
            histories: vec![10, 50, 100, 150],
            history_queries: 1000,
        }
    }
}

impl QueryBench {
    /// Frames [`bench_queries`] consumes.
    pub fn frames_needed(&self, trials: &Trials) -> usize {
        self.history.max(self.histories.iter().copied().max().unwrap_or(0)) + (trials.warmup + trials.trials) * self.n_queries.len()
    }
}

/// Experiments, each row timing one insertion followed by `parameter`
/// queries:
/// - `nanomap_best`: every query lies in front of the newest view;
/// - `nanomap_worst`: no query was ever seen, so each walks the history;
/// - `baseline`: fuse the cloud, then the same queries as `nanomap_best`
///   answered by the nearest occupied voxel.
///
/// `nanomap_worst_history` times `history_queries` unseen queries alone,
/// with the chain trimmed to `parameter` frames.
pub fn bench_queries(scene: &BenchScene, cfg: &QueryBench, trials: &Trials) -> Result<Vec<BenchRow>> {
    let base_len = cfg.history.max(cfg.histories.iter().copied().max().unwrap_or(0));
    if scene.frames.len() < cfg.frames_needed(trials) {
        bail!("the scene holds {} frames, the query benchmark needs {}", scene.frames.len(), cfg.frames_needed(trials));
    }
    let mut rows = Vec::new();
    let unseen = unseen_queries(cfg.n_queries.iter().copied().max().unwrap_or(0).max(cfg.history_queries), 7);

    for worst in [false, true] {
        let (mut chain, mut next_pose) = scene.chain(cfg.history, base_len)?;
        let mut cursor = base_len;
        let name = if worst { "nanomap_worst" } else { "nanomap_best" };
        for &n in &cfg.n_queries {
            measure(name, n, trials, &mut rows, |_| {
                let (t, cloud) = &scene.frames[cursor];
                scene.feed_poses_until(&mut chain, &mut next_pose, *t)?;
                let queries = if worst { unseen[..n].to_vec() } else { scene.visible_queries(cursor, n) };
                let cloud = PointCloud::clone(cloud);
                cursor += 1;
                let start = Instant::now();
                chain.add_cloud(*t, cloud)?;
                let depth = run_queries(&chain, &queries, trials.parallel)?;
                Ok((elapsed_ns(start), depth))
            })?;
        }
    }

    let base_map = scene.baseline(base_len)?;
    let mut cursor = base_len;
    for &n in &cfg.n_queries {
        measure("baseline", n, trials, &mut rows, |_| {
            let (t, cloud) = &scene.frames[cursor];
            let pose = scene.body_pose(*t).compose(&scene.mount);
            let world = scene.body_pose(*t);
            let queries: Vec<Vector3<f64>> = scene.visible_queries(cursor, n).iter().map(|q| world.apply(q.mean())).collect();
            let mut map = base_map.clone();
            let cloud = Arc::clone(cloud);
            cursor += 1;
            let start = Instant::now();
            map.fuse(*t, cloud, pose);
            for q in &queries {
                map.nearest_occupied(q)?;
            }
            let elapsed = elapsed_ns(start);
            drop(map);
            Ok((elapsed, n as u64))
        })?;
    }
    drop(base_map);

    let (mut chain, _) = scene.chain(base_len, base_len)?;
    let mut histories = cfg.histories.clone();
    histories.sort_unstable_by(|a, b| b.cmp(a));
    let queries = &unseen[..cfg.history_queries];
    for &h in &histories {
        chain.trim(h)?;
        measure("nanomap_worst_history", h, trials, &mut rows, |_| {
            let start = Instant::now();
            let depth = run_queries(&chain, queries, trials.parallel)?;
            Ok((elapsed_ns(start), depth))
        })?;
    }
    // Keep the sweep in ascending order in the report.
    let (mut sweep, mut rest): (Vec<BenchRow>, Vec<BenchRow>) = rows.into_iter().partition(|r| r.experiment == "nanomap_worst_history");
    sweep.sort_by_key(|r| (r.parameter, r.trial));
    rest.extend(sweep);
    Ok(rest)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoseBench {
    pub history: usize,
    pub n_poses: Vec<usize>,
}

impl Default for PoseBench {
    fn default() -> Self {
        Self {
            history: 150,
            n_poses: vec![0, 10, 50, 100, 150],
        }
    }
}

/// Experiments, each row applying a batch of `parameter` corrected poses,
/// one per frame and newest first in coverage:
/// - `chain_update`: rewrite the chain's edges;
/// - `baseline_refuse`: move the affected clouds in the voxel map;
/// - `baseline_rebuild`: re-fuse the whole log, recorded only when the
///   batch covers every frame.
///
/// Trials alternate between shifted and original poses so every one does
/// real work.
pub fn bench_pose_updates(scene: &BenchScene, cfg: &PoseBench, trials: &Trials) -> Result<Vec<BenchRow>> {
    let history = cfg.history;
    if scene.frames.len() < history {
        bail!("the scene holds {} frames, the pose benchmark needs {history}", scene.frames.len());
    }
    if let Some(&n) = cfg.n_poses.iter().find(|&&n| n > history) {
        bail!("cannot correct {n} poses with a history of {history} frames");
    }
    let shift = Vector3::new(0.05, -0.03, 0.0);
    let batch = |n: usize, shifted: bool| -> Vec<TimedPose<f64>> {
        scene.frames[history - n..history]
            .iter()
            .map(|(t, _)| {
                let p = scene.body_pose(*t);
                let d = if shifted { shift } else { Vector3::zeros() };
                TimedPose::new(*t, RigidTransform::from_parts(*p.rotation(), p.translation() + d))
            })
            .collect()
    };

    let mut rows = Vec::new();
    let (mut chain, _) = scene.chain(history, history)?;
    for &n in &cfg.n_poses {
        let batches = [batch(n, true), batch(n, false)];
        measure("chain_update", n, trials, &mut rows, |i| {
            let start = Instant::now();
            let report = chain.apply_pose_updates(&batches[i % 2])?;
            Ok((elapsed_ns(start), report.edges_rewritten as u64))
        })?;
    }
    drop(chain);

    let mut map = scene.baseline(history)?;
    for &n in &cfg.n_poses {
        let batches = [batch(n, true), batch(n, false)];
        measure("baseline_refuse", n, trials, &mut rows, |i| {
            let start = Instant::now();
            let moved = map.refuse_affected(&batches[i % 2])?;
            Ok((elapsed_ns(start), moved as u64))
        })?;
    }
    for &n in cfg.n_poses.iter().filter(|&&n| n == history) {
        let batches = [batch(n, true), batch(n, false)];
        measure("baseline_rebuild", n, trials, &mut rows, |i| {
            let start = Instant::now();
            let rebuilt = map.rebuild(&batches[i % 2]).context("rebuilding the voxel map")?;
            let elapsed = elapsed_ns(start);
            let clouds = rebuilt.log().len() as u64;
            drop(rebuilt);
            Ok((elapsed, clouds))
        })?;
    }
    Ok(rows)
}
