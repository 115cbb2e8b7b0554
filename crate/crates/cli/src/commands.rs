//! Log replay, scenario export and the search-depth histogram.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::Matrix3;
use nanomap::{neighbors_in_body_frame, query_batch, CameraModel, ChainConfig, FrameChain, GaussianPoint, QueryConfig, RigidTransform, TimedPose};
use nanomap_sim::scenario::ScenarioMetrics;
use nanomap_sim::{presets, ReplayStats, Scenario, ScenarioSpec, Streams};
use serde::Serialize;

use crate::config::{mount_to, ChainSection, Config, EdgeSigma, ScenarioSection};
use crate::logs::{self, canonical_pose};

pub const POSE_LOG: &str = "poses.log";
pub const CLOUD_LOG: &str = "clouds.log";
pub const CORRECTION_LOG: &str = "corrections.log";
pub const QUERY_FILE: &str = "queries.txt";
pub const TRUTH_LOG: &str = "truth.log";
pub const CHAIN_CONFIG: &str = "nanomap.toml";
pub const SCENARIO_FILE: &str = "scenario.toml";

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("cannot open {}", path.display()))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

/// Input streams and camera read from log files.
pub fn load_streams(poses: &Path, clouds: &Path, corrections: Option<&Path>, queries: Option<&Path>) -> Result<(Streams, CameraModel<f64>)> {
    let label = |p: &Path| p.display().to_string();
    let pose_log = logs::read_poses(&label(poses), open(poses)?)?;
    let cloud_log = logs::read_clouds(&label(clouds), open(clouds)?)?;
    let Some(camera) = cloud_log.camera else {
        bail!("{}: the cloud log holds no frames", clouds.display());
    };
    let corrections = match corrections {
        Some(p) => logs::read_corrections(&label(p), open(p)?)?,
        None => Vec::new(),
    };
    let queries = match queries {
        Some(p) => logs::read_queries(&label(p), open(p)?)?,
        None => Vec::new(),
    };
    Ok((
        Streams {
            poses: pose_log,
            clouds: cloud_log.clouds,
            corrections,
            queries,
        },
        camera,
    ))
}

/// Chain and query parameters after merging flags over the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOptions {
    pub capacity: usize,
    pub k: usize,
    pub edge_sigma: Matrix3<f64>,
    pub frame_period: f64,
    pub mount: RigidTransform<f64>,
    pub leaf_size: Option<usize>,
    pub occlusion_margin: Option<f64>,
    pub parallel: bool,
}

impl ChainOptions {
    pub fn from_section(s: &ChainSection) -> Self {
        Self {
            capacity: s.capacity.unwrap_or(150),
            k: s.k.unwrap_or(1),
            edge_sigma: s.edge_sigma.map_or(Matrix3::zeros(), |e| e.matrix()),
            frame_period: s.frame_period.unwrap_or(1.0 / 30.0),
            mount: s.mount.map_or(RigidTransform::identity(), crate::config::mount_from),
            leaf_size: s.leaf_size,
            occlusion_margin: s.occlusion_margin,
            parallel: false,
        }
    }

    pub fn chain_config(&self, camera: CameraModel<f64>) -> ChainConfig<f64> {
        let base = ChainConfig::new(camera);
        ChainConfig {
            capacity: self.capacity,
            edge_sigma: self.edge_sigma,
            nominal_frame_period: self.frame_period,
            sensor_mount: self.mount,
            leaf_size: self.leaf_size.unwrap_or(base.leaf_size),
            ..base
        }
    }

    pub fn query_config(&self) -> QueryConfig<f64> {
        let base = QueryConfig::default();
        QueryConfig {
            occlusion_margin: self.occlusion_margin.unwrap_or(base.occlusion_margin),
        }
    }
}

/// One neighbor of one query. Queries issued before any frame was inserted,
/// or answered from an empty frame, get a single row without a neighbor.
/// `frame_index` is -1 when no view saw the query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub time: f64,
    pub query_id: usize,
    pub search_depth: usize,
    pub frame_index: i64,
    pub rank: Option<usize>,
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub z: Option<f64>,
    pub distance: Option<f64>,
}

pub const RESULT_HEADER: [&str; 9] = ["time", "query_id", "search_depth", "frame_index", "rank", "x", "y", "z", "distance"];

/// Replays `streams` into a fresh chain and writes one CSV row per returned
/// neighbor, positions in the body frame at query time.
pub fn replay_to_csv<W: Write>(streams: &Streams, camera: CameraModel<f64>, opts: &ChainOptions, out: W) -> Result<ReplayStats> {
    let mut chain = FrameChain::new(opts.chain_config(camera))?;
    let qcfg = opts.query_config();
    let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    csv.write_record(RESULT_HEADER)?;
    let stats = streams.replay(&mut chain, |_, t, chain: &FrameChain<f64>, queries: &[GaussianPoint<f64>]| -> Result<()> {
        if chain.is_empty() {
            for query_id in 0..queries.len() {
                csv.serialize(empty_row(t, query_id, 0, -1))?;
            }
            return Ok(());
        }
        let results = query_batch(chain, queries, opts.k, &qcfg, opts.parallel)?;
        for (query_id, res) in results.iter().enumerate() {
            let frame_index = res.frame_index().map_or(-1, |i| i as i64);
            let points = neighbors_in_body_frame(chain, res)?;
            if points.is_empty() {
                csv.serialize(empty_row(t, query_id, res.search_depth, frame_index))?;
            }
            for (rank, (p, n)) in points.iter().zip(&res.neighbors).enumerate() {
                csv.serialize(ResultRow {
                    time: t,
                    query_id,
                    search_depth: res.search_depth,
                    frame_index,
                    rank: Some(rank),
                    x: Some(p.x),
                    y: Some(p.y),
                    z: Some(p.z),
                    distance: Some(n.distance()),
                })?;
            }
        }
        Ok(())
    })?;
    csv.flush()?;
    Ok(stats)
}

fn empty_row(time: f64, query_id: usize, search_depth: usize, frame_index: i64) -> ResultRow {
    ResultRow {
        time,
        query_id,
        search_depth,
        frame_index,
        rank: None,
        x: None,
        y: None,
        z: None,
        distance: None,
    }
}

/// Streams cut at `time`, with one query step at `time`.
pub fn single_query(streams: &Streams, time: f64, query: GaussianPoint<f64>) -> Streams {
    Streams {
        poses: streams.poses.iter().filter(|p| p.time <= time).copied().collect(),
        clouds: streams.clouds.iter().filter(|c| c.0 <= time).cloned().collect(),
        corrections: streams.corrections.iter().filter(|c| c.0 <= time).cloned().collect(),
        queries: vec![(time, vec![query])],
    }
}

/// A preset name or a path to a scenario TOML file.
pub fn scenario_spec(name: &str) -> Result<ScenarioSpec> {
    if let Some(spec) = presets::by_name(name) {
        return Ok(spec);
    }
    let path = PathBuf::from(name);
    if !path.exists() {
        bail!("'{name}' is neither a preset ({}) nor a file", presets::NAMES.join(", "));
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {}", path.display(), crate::config::one_line(&e.to_string())))
}

/// Loads a scenario with the drift overrides of `section` applied.
pub fn load_scenario(section: &ScenarioSection, default: &str) -> Result<Scenario> {
    let mut spec = scenario_spec(section.scenario.as_deref().unwrap_or(default))?;
    if let Some(sigma) = section.sigma {
        spec.drift.sigma_actual = sigma;
    }
    if let Some(seed) = section.seed {
        spec.drift.seed = seed;
    }
    Ok(Scenario::new(spec)?)
}

/// Everything `export-scenario` wrote, as held in memory.
#[derive(Debug, Clone)]
pub struct Export {
    pub streams: Streams,
    pub camera: CameraModel<f64>,
    pub truth: Vec<TimedPose<f64>>,
    pub config: Config,
}

/// Renders `scenario` and writes its logs, the chain settings and the spec
/// into `dir`. Poses are stored exactly as a re-read log reproduces them.
pub fn export_scenario(scenario: &Scenario, dir: &Path) -> Result<Export> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let frames = scenario.render_frames();
    let mut streams = scenario.streams(&frames)?;
    let canon = |p: &TimedPose<f64>| TimedPose::new(p.time, canonical_pose(&p.pose));
    streams.poses = streams.poses.iter().map(canon).collect();
    for (_, batch) in &mut streams.corrections {
        *batch = batch.iter().map(canon).collect();
    }
    let truth: Vec<TimedPose<f64>> = scenario.truth.iter().map(canon).collect();

    let config = Config {
        chain: ChainSection {
            capacity: Some(scenario.spec.capacity),
            k: Some(scenario.spec.k),
            edge_sigma: Some(EdgeSigma::from_matrix(&scenario.edge_sigma)),
            frame_period: Some(1.0 / scenario.spec.frame_rate),
            mount: Some(mount_to(&scenario.mount)),
            ..ChainSection::default()
        },
        ..Config::default()
    };

    let write = |name: &str, f: &dyn Fn(&mut BufWriter<File>) -> std::io::Result<()>| -> Result<()> {
        let path = dir.join(name);
        let mut w = create(&path)?;
        f(&mut w).and_then(|_| w.flush()).with_context(|| format!("writing {}", path.display()))
    };
    write(POSE_LOG, &|w| logs::write_poses(w, &streams.poses))?;
    write(TRUTH_LOG, &|w| logs::write_poses(w, &truth))?;
    write(CLOUD_LOG, &|w| logs::write_clouds(w, &scenario.camera, &streams.clouds))?;
    write(CORRECTION_LOG, &|w| logs::write_corrections(w, &streams.corrections))?;
    write(QUERY_FILE, &|w| logs::write_queries(w, &streams.queries))?;
    let chain_toml = toml::to_string(&config)?;
    write(CHAIN_CONFIG, &|w| w.write_all(chain_toml.as_bytes()))?;
    let spec_toml = toml::to_string(&scenario.spec)?;
    write(SCENARIO_FILE, &|w| w.write_all(spec_toml.as_bytes()))?;
    Ok(Export {
        streams,
        camera: scenario.camera.clone(),
        truth,
        config,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct HistogramRow {
    time_start: f64,
    search_depth: usize,
    count: u64,
}

/// Nonzero histogram cells as `time_start,search_depth,count`.
pub fn write_histogram<W: Write>(w: W, metrics: &ScenarioMetrics) -> Result<()> {
    let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    csv.write_record(["time_start", "search_depth", "count"])?;
    for (b, counts) in metrics.depth_histogram.iter().enumerate() {
        for (depth, &count) in counts.iter().enumerate().filter(|(_, c)| **c > 0) {
            csv.serialize(HistogramRow {
                time_start: metrics.start + b as f64 * metrics.bucket,
                search_depth: depth,
                count,
            })?;
        }
    }
    csv.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct MetricRow {
    time: f64,
    query_id: usize,
    search_depth: usize,
    frame_index: i64,
    error_m: Option<f64>,
    gamma_m: f64,
}

/// Per-query metrics as `time,query_id,search_depth,frame_index,error_m,gamma_m`.
pub fn write_metrics<W: Write>(w: W, metrics: &ScenarioMetrics) -> Result<()> {
    let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    csv.write_record(["time", "query_id", "search_depth", "frame_index", "error_m", "gamma_m"])?;
    for r in &metrics.records {
        csv.serialize(MetricRow {
            time: r.time,
            query_id: r.query_id,
            search_depth: r.search_depth,
            frame_index: r.frame_index.map_or(-1, |i| i as i64),
            error_m: r.error,
            gamma_m: metrics.gamma,
        })?;
    }
    csv.flush()?;
    Ok(())
}

/// The summary line printed next to the histogram.
pub fn histogram_summary(metrics: &ScenarioMetrics) -> String {
    format!(
        "queries={} depth_1={:.4} within_40={:.4} gamma_m={:.6}",
        metrics.total_queries(),
        metrics.fraction_at_depth_one(),
        metrics.fraction_within_depth(40),
        metrics.gamma
    )
}
