//! Time-ordered replay of pose, correction, cloud and query streams into a
//! chain.

use std::sync::Arc;

use nanomap::{ChainError, FrameChain, GaussianPoint, Insertion, PointCloud, TimedPose};

/// The four input streams of a mapping run, each in time order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Streams {
    pub poses: Vec<TimedPose<f64>>,
    /// Shared so that several runs can replay one rendering.
    pub clouds: Vec<(f64, Arc<PointCloud<f64>>)>,
    /// Batches of corrected body poses, keyed by the time they become known.
    pub corrections: Vec<(f64, Vec<TimedPose<f64>>)>,
    /// Body-frame query sets, keyed by the time they are issued.
    pub queries: Vec<(f64, Vec<GaussianPoint<f64>>)>,
}

/// Index into one of the streams. Ordering among equal timestamps follows
/// the declaration order: poses, corrections, clouds, queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Event {
    Pose(usize),
    Correction(usize),
    Cloud(usize),
    Query(usize),
}

impl Event {
    fn rank(self) -> u8 {
        match self {
            Event::Pose(_) => 0,
            Event::Correction(_) => 1,
            Event::Cloud(_) => 2,
            Event::Query(_) => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReplayStats {
    pub poses: usize,
    pub corrections: usize,
    pub clouds_inserted: usize,
    pub clouds_deferred: usize,
    pub clouds_dropped: usize,
    pub query_steps: usize,
}

impl Streams {
    /// All events sorted by time, then stream, then position in the stream.
    pub fn events(&self) -> Vec<(f64, Event)> {
        let mut out: Vec<(f64, Event)> = Vec::with_capacity(self.poses.len() + self.clouds.len() + self.corrections.len() + self.queries.len());
        out.extend(self.poses.iter().enumerate().map(|(i, p)| (p.time, Event::Pose(i))));
        out.extend(self.corrections.iter().enumerate().map(|(i, c)| (c.0, Event::Correction(i))));
        out.extend(self.clouds.iter().enumerate().map(|(i, c)| (c.0, Event::Cloud(i))));
        out.extend(self.queries.iter().enumerate().map(|(i, q)| (q.0, Event::Query(i))));
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.rank().cmp(&b.1.rank())).then(a.1.cmp(&b.1)));
        out
    }

    /// Feeds every event to `chain` in order and hands each query step to
    /// `on_query` with the chain as it stands at that moment.
    pub fn replay<E, F>(&self, chain: &mut FrameChain<f64>, mut on_query: F) -> Result<ReplayStats, E>
    where
        E: From<ChainError>,
        F: FnMut(usize, f64, &FrameChain<f64>, &[GaussianPoint<f64>]) -> Result<(), E>,
    {
        let mut stats = ReplayStats::default();
        for (_, event) in self.events() {
            match event {
                Event::Pose(i) => {
                    let ingest = chain.add_pose(self.poses[i])?;
                    stats.clouds_inserted += ingest.frames_inserted;
                    stats.poses += 1;
                }
                Event::Correction(i) => {
                    chain.apply_pose_updates(&self.corrections[i].1)?;
                    stats.corrections += 1;
                }
                Event::Cloud(i) => {
                    let (t, cloud) = &self.clouds[i];
                    match chain.add_cloud(*t, PointCloud::clone(cloud))? {
                        Insertion::Inserted { .. } => stats.clouds_inserted += 1,
                        Insertion::Deferred { dropped } => {
                            stats.clouds_deferred += 1;
                            stats.clouds_dropped += usize::from(dropped.is_some());
                        }
                    }
                }
                Event::Query(i) => {
                    let (t, qs) = &self.queries[i];
                    on_query(i, *t, chain, qs)?;
                    stats.query_steps += 1;
                }
            }
        }
        Ok(stats)
    }
}
