//! Minimum-uncertainty view search.
//!
//! A body-frame Gaussian query is walked backwards through the chain, picking
//! up each edge's translation covariance, until a frame is found whose
//! observed free space contains the query's one-sigma box. The k nearest
//! neighbours are then read from that frame's k-d tree.

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::chain::{FrameChain, SensorFrame};
use crate::geometry::{one_sigma_aabb, GaussianPoint, RigidTransform};
use crate::kdtree::Neighbor;
use crate::scalar::Real;

pub const DEFAULT_OCCLUSION_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("the chain holds no frames")]
    NoData,
    #[error("frame {0} is not in the chain")]
    NoSuchFrame(usize),
}

/// Where a query point sits relative to one frame's observed free space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FovClassification {
    FreeSpace,
    /// In front of the near plane, behind the camera, or degenerate.
    BehindSensor,
    OutsideLateral,
    OutsideVertical,
    BeyondHorizon,
    Occluded,
}

impl FovClassification {
    pub fn is_free(self) -> bool {
        self == Self::FreeSpace
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryConfig<T: Real> {
    /// Slack allowed behind the measured surface before a point counts as
    /// occluded.
    pub occlusion_margin: T,
}

impl<T: Real> Default for QueryConfig<T> {
    fn default() -> Self {
        Self {
            occlusion_margin: T::lit(DEFAULT_OCCLUSION_MARGIN),
        }
    }
}

/// Frame that answered a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewIndex {
    Frame(usize),
    /// No stored view contains the query; data comes from the newest frame.
    OutOfKnownSpace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult<T: Real> {
    pub view: ViewIndex,
    /// The query expressed in the frame the neighbours come from.
    pub query_in_frame: GaussianPoint<T>,
    /// Ascending by distance to `query_in_frame.mean()`, in that frame.
    pub neighbors: Vec<Neighbor<T>>,
    /// Number of frames examined.
    pub search_depth: usize,
}

impl<T: Real> QueryResult<T> {
    pub fn frame_index(&self) -> Option<usize> {
        match self.view {
            ViewIndex::Frame(i) => Some(i),
            ViewIndex::OutOfKnownSpace => None,
        }
    }

    pub fn is_out_of_known_space(&self) -> bool {
        self.view == ViewIndex::OutOfKnownSpace
    }

    /// Frame whose coordinates `query_in_frame` and `neighbors` use.
    pub fn data_frame(&self) -> usize {
        self.frame_index().unwrap_or(0)
    }
}

/// Classifies a sensor-frame Gaussian point against one frame.
///
/// Free space requires the whole one-sigma box inside the near, lateral,
/// vertical and far planes, and the mean no more than the occlusion margin
/// behind the surface seen at its pixel. A pixel with no return is treated
/// as free out to maximum range. Failures are reported in a fixed order:
/// behind, lateral, vertical, horizon, occluded.
pub fn is_in_fov<T: Real>(frame: &SensorFrame<T>, p: &GaussianPoint<T>, config: &QueryConfig<T>) -> FovClassification {
    let camera = frame.camera();
    let aabb = one_sigma_aabb(p);
    let nearest_z = aabb.center().z - aabb.half_widths().z;
    if !(nearest_z >= camera.min_range()) {
        return FovClassification::BehindSensor;
    }
    if camera.lateral_planes().iter().any(|n| aabb.min_dot(n) < T::zero()) {
        return FovClassification::OutsideLateral;
    }
    if camera.vertical_planes().iter().any(|n| aabb.min_dot(n) < T::zero()) {
        return FovClassification::OutsideVertical;
    }
    if aabb.center().z + aabb.half_widths().z > camera.max_range() {
        return FovClassification::BeyondHorizon;
    }
    let mean = p.mean();
    let Some(proj) = camera.project(mean) else {
        return FovClassification::BehindSensor;
    };
    let Some((row, col)) = camera.pixel(proj.u, proj.v) else {
        // Unreachable when the box test passed; kept total for NaN inputs.
        return FovClassification::OutsideLateral;
    };
    match frame.cloud().get(row, col) {
        Some(surface) if surface.z < mean.z - config.occlusion_margin => FovClassification::Occluded,
        _ => FovClassification::FreeSpace,
    }
}

/// Reverse search over the chain for the newest view containing `query`.
///
/// Falls back to the newest frame, flagged out of known space, when no view
/// contains it.
pub fn nanomap_query<T: Real>(chain: &FrameChain<T>, query: &GaussianPoint<T>, k: usize, config: &QueryConfig<T>) -> Result<QueryResult<T>, QueryError> {
    let body_edge = chain.body_edge().ok_or(QueryError::NoData)?;
    let newest = chain.frame(0).ok_or(QueryError::NoData)?;
    let in_newest = body_edge.apply(query);
    let mut current = in_newest;
    for i in 0..chain.len() {
        if i > 0 {
            let edge = chain.edge_to_older(i - 1).expect("chain edges are contiguous");
            current = edge.apply(&current);
        }
        let frame = chain.frame(i).expect("index within chain");
        if is_in_fov(frame, &current, config).is_free() {
            return Ok(QueryResult {
                view: ViewIndex::Frame(i),
                neighbors: frame.tree().knn(current.mean(), k),
                query_in_frame: current,
                search_depth: i + 1,
            });
        }
    }
    Ok(QueryResult {
        view: ViewIndex::OutOfKnownSpace,
        neighbors: newest.tree().knn(in_newest.mean(), k),
        query_in_frame: in_newest,
        search_depth: chain.len(),
    })
}

/// Mean transform `T^{S_i}_B` from the body frame into frame `i`.
pub fn body_to_frame<T: Real>(chain: &FrameChain<T>, i: usize) -> Result<RigidTransform<T>, QueryError> {
    let mut t = *chain.body_edge().ok_or(QueryError::NoData)?.transform();
    if i >= chain.len() {
        return Err(QueryError::NoSuchFrame(i));
    }
    for j in 1..=i {
        t = chain.edge_into(j).expect("index within chain").transform().compose(&t);
    }
    Ok(t)
}

/// Maps a result's neighbours back into the current body frame through the
/// inverse mean transforms. Order is preserved.
pub fn neighbors_in_body_frame<T: Real>(chain: &FrameChain<T>, result: &QueryResult<T>) -> Result<Vec<Vector3<T>>, QueryError> {
    if result.neighbors.is_empty() {
        return Ok(Vec::new());
    }
    let to_body = body_to_frame(chain, result.data_frame())?.inverse();
    Ok(result.neighbors.iter().map(|n| to_body.apply(&n.point)).collect())
}

/// Evaluates many independent queries; `parallel` fans them out over rayon.
pub fn query_batch<T: Real>(chain: &FrameChain<T>, queries: &[GaussianPoint<T>], k: usize, config: &QueryConfig<T>, parallel: bool) -> Result<Vec<QueryResult<T>>, QueryError> {
    if parallel {
        queries.par_iter().map(|q| nanomap_query(chain, q, k, config)).collect()
    } else {
        queries.iter().map(|q| nanomap_query(chain, q, k, config)).collect()
    }
}

impl<T: Real> FrameChain<T> {
    /// [`nanomap_query`] with the default occlusion margin.
    pub fn query(&self, query: &GaussianPoint<T>, k: usize) -> Result<QueryResult<T>, QueryError> {
        nanomap_query(self, query, k, &QueryConfig::default())
    }
}
