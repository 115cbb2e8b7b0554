//! Fused world-frame voxel map: the conventional alternative a frame chain
//! is measured against.
//!
//! Every valid point is moved into the world frame with the pose known at
//! insertion time and counted in a sparse voxel grid. Nearest-obstacle
//! queries search outward block by block. New pose information can only be
//! absorbed by re-fusing the logged clouds.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use nalgebra::Vector3;
use nanomap::{interpolate_in, PointCloud, RigidTransform, TimedPose};
use thiserror::Error;

pub const DEFAULT_VOXEL_SIZE: f64 = 0.25;
pub const DEFAULT_BLOCK_CELLS: i32 = 8;

pub type CellKey = [i32; 3];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error("the map has no occupied cells")]
    Empty,
    #[error("logged cloud {index} at t = {time} is outside the corrected poses")]
    Uncovered { index: usize, time: f64 },
    #[error("invalid map configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelMapConfig {
    pub voxel_size: f64,
    /// Points needed before a cell counts as occupied.
    pub hit_threshold: u32,
    /// Edge length of a search block, in cells.
    pub block_cells: i32,
    /// Sensor pose in the body frame, used when re-fusing from body poses.
    pub sensor_mount: RigidTransform<f64>,
}

impl Default for VoxelMapConfig {
    fn default() -> Self {
        Self {
            voxel_size: DEFAULT_VOXEL_SIZE,
            hit_threshold: 1,
            block_cells: DEFAULT_BLOCK_CELLS,
            sensor_mount: RigidTransform::identity(),
        }
    }
}

/// One fused cloud and the sensor pose it was fused with.
#[derive(Debug, Clone)]
pub struct LogEntry {
    pub timestamp: f64,
    pub world_pose: RigidTransform<f64>,
    pub cloud: Arc<PointCloud<f64>>,
}

#[derive(Debug, Clone)]
pub struct VoxelMap {
    config: VoxelMapConfig,
    counts: HashMap<CellKey, u32>,
    /// Occupied cells grouped by search block.
    blocks: HashMap<CellKey, Vec<CellKey>>,
    occupied: usize,
    log: Vec<LogEntry>,
}

fn dist2(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let d = a - b;
    d.x * d.x + d.y * d.y + d.z * d.z
}

impl VoxelMap {
    pub fn new(config: VoxelMapConfig) -> Result<Self, BaselineError> {
        if !(config.voxel_size > 0.0 && config.voxel_size.is_finite()) {
            return Err(BaselineError::InvalidConfig("voxel size must be positive"));
        }
        if config.hit_threshold == 0 {
            return Err(BaselineError::InvalidConfig("hit threshold must be at least 1"));
        }
        if config.block_cells < 1 {
            return Err(BaselineError::InvalidConfig("blocks must hold at least one cell"));
        }
        Ok(Self {
            config,
            counts: HashMap::new(),
            blocks: HashMap::new(),
            occupied: 0,
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &VoxelMapConfig {
        &self.config
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn occupied_len(&self) -> usize {
        self.occupied
    }

    pub fn is_empty(&self) -> bool {
        self.occupied == 0
    }

    pub fn hits(&self, key: &CellKey) -> u32 {
        self.counts.get(key).copied().unwrap_or(0)
    }

    pub fn is_occupied(&self, key: &CellKey) -> bool {
        self.hits(key) >= self.config.hit_threshold
    }

    pub fn occupied_cells(&self) -> BTreeSet<CellKey> {
        self.blocks.values().flatten().copied().collect()
    }

    pub fn key_of(&self, p: &Vector3<f64>) -> CellKey {
        let v = self.config.voxel_size;
        [(p.x / v).floor() as i32, (p.y / v).floor() as i32, (p.z / v).floor() as i32]
    }

    pub fn cell_center(&self, key: &CellKey) -> Vector3<f64> {
        let v = self.config.voxel_size;
        Vector3::new((key[0] as f64 + 0.5) * v, (key[1] as f64 + 0.5) * v, (key[2] as f64 + 0.5) * v)
    }

    fn block_of(&self, key: &CellKey) -> CellKey {
        let b = self.config.block_cells;
        [key[0].div_euclid(b), key[1].div_euclid(b), key[2].div_euclid(b)]
    }

    fn bump(&mut self, key: CellKey, up: bool) {
        let threshold = self.config.hit_threshold;
        let block = self.block_of(&key);
        let count = self.counts.entry(key).or_insert(0);
        if up {
            *count += 1;
            if *count == threshold {
                self.blocks.entry(block).or_default().push(key);
                self.occupied += 1;
            }
        } else {
            debug_assert!(*count > 0, "unfusing a point that was never fused");
            *count -= 1;
            let dropped = *count + 1 == threshold;
            if *count == 0 {
                self.counts.remove(&key);
            }
            if dropped {
                let cells = self.blocks.get_mut(&block).expect("occupied cell has a block");
                let i = cells.iter().position(|c| *c == key).expect("occupied cell is listed");
                cells.swap_remove(i);
                if cells.is_empty() {
                    self.blocks.remove(&block);
                }
                self.occupied -= 1;
            }
        }
    }

    fn apply(&mut self, cloud: &PointCloud<f64>, pose: &RigidTransform<f64>, up: bool) {
        for (_, p) in cloud.valid_points() {
            let key = self.key_of(&pose.apply(p));
            self.bump(key, up);
        }
    }

    /// Adds every valid point of `cloud`, seen from sensor pose `world_pose`,
    /// and logs the cloud for later re-fusion.
    pub fn fuse(&mut self, timestamp: f64, cloud: Arc<PointCloud<f64>>, world_pose: RigidTransform<f64>) {
        self.apply(&cloud, &world_pose, true);
        self.log.push(LogEntry {
            timestamp,
            world_pose,
            cloud,
        });
    }

    /// Occupied cell center nearest to `query` and its distance. Equal
    /// distances resolve to the lexicographically smallest cell.
    pub fn nearest_occupied(&self, query: &Vector3<f64>) -> Result<(Vector3<f64>, f64), BaselineError> {
        if self.occupied == 0 {
            return Err(BaselineError::Empty);
        }
        let block_len = self.config.voxel_size * self.config.block_cells as f64;
        let qb = self.block_of(&self.key_of(query));
        let mut best: Option<(f64, CellKey)> = None;
        let offer = |best: &mut Option<(f64, CellKey)>, cells: &[CellKey]| {
            for key in cells {
                let d = dist2(&self.cell_center(key), query);
                if best.is_none_or(|(bd, bk)| d < bd || (d == bd && *key < bk)) {
                    *best = Some((d, *key));
                }
            }
        };
        for r in 0i32.. {
            if let Some((bd, _)) = best {
                // Blocks in ring r are at least (r - 1) block lengths away.
                let gap = (r - 1) as f64 * block_len;
                if gap > 0.0 && gap * gap > bd {
                    break;
                }
            }
            let ring = if r == 0 { 1 } else { (2 * r as i64 + 1).pow(3) - (2 * r as i64 - 1).pow(3) };
            if ring > self.blocks.len() as i64 {
                // Cheaper to scan what is left than to walk empty shells.
                for cells in self.blocks.values() {
                    offer(&mut best, cells);
                }
                break;
            }
            for dx in -r..=r {
                for dy in -r..=r {
                    let on_face = dx.abs() == r || dy.abs() == r;
                    let step = if on_face { 1 } else { (2 * r).max(1) };
                    let mut dz = -r;
                    while dz <= r {
                        if let Some(cells) = self.blocks.get(&[qb[0] + dx, qb[1] + dy, qb[2] + dz]) {
                            offer(&mut best, cells);
                        }
                        dz += step;
                    }
                }
            }
        }
        let (d2, key) = best.expect("non-empty map has a nearest cell");
        Ok((self.cell_center(&key), d2.sqrt()))
    }

    fn corrected_pose(&self, corrected: &[TimedPose<f64>], index: usize, time: f64) -> Result<RigidTransform<f64>, BaselineError> {
        interpolate_in(corrected, time)
            .map(|body| body.compose(&self.config.sensor_mount))
            .ok_or(BaselineError::Uncovered { index, time })
    }

    /// Fresh map re-fusing every logged cloud at the body poses
    /// interpolated from `corrected`.
    pub fn rebuild(&self, corrected: &[TimedPose<f64>]) -> Result<VoxelMap, BaselineError> {
        let mut poses = Vec::with_capacity(self.log.len());
        for (i, e) in self.log.iter().enumerate() {
            poses.push(self.corrected_pose(corrected, i, e.timestamp)?);
        }
        let mut map = VoxelMap::new(self.config.clone())?;
        for (e, pose) in self.log.iter().zip(poses) {
            map.fuse(e.timestamp, Arc::clone(&e.cloud), pose);
        }
        Ok(map)
    }

    /// Re-fuses in place only the clouds whose timestamps fall inside the
    /// span of `corrected`: each is removed at its old pose and added at the
    /// new one. Returns the number of clouds moved.
    pub fn refuse_affected(&mut self, corrected: &[TimedPose<f64>]) -> Result<usize, BaselineError> {
        let (Some(first), Some(last)) = (corrected.first(), corrected.last()) else {
            return Ok(0);
        };
        let mut moves = Vec::new();
        for (i, e) in self.log.iter().enumerate() {
            if e.timestamp >= first.time && e.timestamp <= last.time {
                moves.push((i, self.corrected_pose(corrected, i, e.timestamp)?));
            }
        }
        for &(i, pose) in &moves {
            let cloud = Arc::clone(&self.log[i].cloud);
            let old = self.log[i].world_pose;
            self.apply(&cloud, &old, false);
            self.apply(&cloud, &pose, true);
            self.log[i].world_pose = pose;
        }
        Ok(moves.len())
    }
}
