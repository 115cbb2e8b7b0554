//! Organized point clouds and a static 3D k-d tree for exact k-NN.

use nalgebra::Vector3;
use thiserror::Error;

use crate::scalar::Real;

pub const DEFAULT_LEAF_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CloudError {
    #[error("grid holds {actual} entries, expected {rows}×{cols}")]
    SizeMismatch { rows: usize, cols: usize, actual: usize },
    #[error("point {index} is valid but has non-positive or non-finite depth")]
    InvalidDepth { index: usize },
}

/// Row-major grid of sensor-frame points, one per pixel. Pixels without a
/// return are stored as the zero vector and flagged invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T: Real> {
    rows: usize,
    cols: usize,
    points: Vec<Vector3<T>>,
    valid: Vec<bool>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(rows: usize, cols: usize, mut points: Vec<Vector3<T>>, valid: Vec<bool>) -> Result<Self, CloudError> {
        let n = rows * cols;
        if points.len() != n || valid.len() != n {
            return Err(CloudError::SizeMismatch {
                rows,
                cols,
                actual: points.len().min(valid.len()),
            });
        }
        for (index, (p, ok)) in points.iter_mut().zip(&valid).enumerate() {
            if *ok {
                if !(p.z > T::zero()) || p.iter().any(|c| !c.is_finite()) {
                    return Err(CloudError::InvalidDepth { index });
                }
            } else {
                *p = Vector3::zeros();
            }
        }
        Ok(Self { rows, cols, points, valid })
    }

    pub fn from_options(rows: usize, cols: usize, grid: Vec<Option<Vector3<T>>>) -> Result<Self, CloudError> {
        let valid = grid.iter().map(Option::is_some).collect();
        let points = grid.into_iter().map(|p| p.unwrap_or_else(Vector3::zeros)).collect();
        Self::new(rows, cols, points, valid)
    }

    /// Grid with no returns at all.
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            points: vec![Vector3::zeros(); rows * cols],
            valid: vec![false; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> Option<&Vector3<T>> {
        if row >= self.rows || col >= self.cols {
            return None;
        }
        self.at_index(row * self.cols + col)
    }

    pub fn at_index(&self, index: usize) -> Option<&Vector3<T>> {
        match self.valid.get(index) {
            Some(true) => Some(&self.points[index]),
            _ => None,
        }
    }

    /// Raw grid, invalid entries zeroed.
    pub fn points(&self) -> &[Vector3<T>] {
        &self.points
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_points(&self) -> impl Iterator<Item = (usize, &Vector3<T>)> + '_ {
        self.points
            .iter()
            .zip(&self.valid)
            .enumerate()
            .filter_map(|(i, (p, ok))| ok.then_some((i, p)))
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// One k-NN hit: the stored point, its grid index, and squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<T: Real> {
    pub point: Vector3<T>,
    pub index: usize,
    pub distance_squared: T,
}

impl<T: Real> Neighbor<T> {
    pub fn distance(&self) -> T {
        self.distance_squared.sqrt()
    }
}

#[derive(Debug, Clone)]
struct Entry<T: Real> {
    point: [T; 3],
    index: u32,
}

#[derive(Debug, Clone)]
struct Node<T: Real> {
    lo: [T; 3],
    hi: [T; 3],
    kind: NodeKind,
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: u32, end: u32 },
    Split { left: u32, right: u32 },
}

/// Balanced k-d tree over the valid points of one cloud. Nodes carry their
/// bounding boxes; internal nodes split at the median of the widest axis.
#[derive(Debug, Clone)]
pub struct KdTree<T: Real> {
    entries: Vec<Entry<T>>,
    nodes: Vec<Node<T>>,
    leaf_size: usize,
}

fn dist2<T: Real>(a: &[T; 3], b: &[T; 3]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn box_dist2<T: Real>(lo: &[T; 3], hi: &[T; 3], q: &[T; 3]) -> T {
    let mut acc = T::zero();
    for axis in 0..3 {
        let d = if q[axis] < lo[axis] {
            lo[axis] - q[axis]
        } else if q[axis] > hi[axis] {
            q[axis] - hi[axis]
        } else {
            continue;
        };
        acc += d * d;
    }
    acc
}

impl<T: Real> KdTree<T> {
    pub fn build(cloud: &PointCloud<T>) -> Self {
        Self::with_leaf_size(cloud, DEFAULT_LEAF_SIZE)
    }

    pub fn with_leaf_size(cloud: &PointCloud<T>, leaf_size: usize) -> Self {
        let entries = cloud
            .valid_points()
            .map(|(i, p)| Entry {
                point: [p.x, p.y, p.z],
                index: i as u32,
            })
            .collect();
        Self::from_entries(entries, leaf_size.max(1))
    }

    /// Tree over an arbitrary point list; indices are list positions.
    pub fn from_points(points: &[Vector3<T>]) -> Self {
        let entries = points
            .iter()
            .enumerate()
            .map(|(i, p)| Entry {
                point: [p.x, p.y, p.z],
                index: i as u32,
            })
            .collect();
        Self::from_entries(entries, DEFAULT_LEAF_SIZE)
    }

    fn from_entries(mut entries: Vec<Entry<T>>, leaf_size: usize) -> Self {
        let mut nodes = Vec::with_capacity(2 * entries.len() / leaf_size + 1);
        if !entries.is_empty() {
            let n = entries.len();
            build_node(&mut entries, 0, n, leaf_size, &mut nodes);
        }
        Self {
            entries,
            nodes,
            leaf_size,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    /// Grid indices of every stored point, in tree order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.index as usize)
    }

    /// The `k` stored points closest to `query`, ascending by distance. Equal
    /// distances are ordered by ascending grid index.
    pub fn knn(&self, query: &Vector3<T>, k: usize) -> Vec<Neighbor<T>> {
        if k == 0 || self.entries.is_empty() {
            return Vec::new();
        }
        let q = [query.x, query.y, query.z];
        let mut best: Vec<(T, u32, usize)> = Vec::with_capacity(k.min(self.entries.len()) + 1);
        self.search(0, &q, k, &mut best);
        best.into_iter()
            .map(|(d2, index, slot)| {
                let p = &self.entries[slot].point;
                Neighbor {
                    point: Vector3::new(p[0], p[1], p[2]),
                    index: index as usize,
                    distance_squared: d2,
                }
            })
            .collect()
    }

    fn search(&self, node: usize, q: &[T; 3], k: usize, best: &mut Vec<(T, u32, usize)>) {
        match self.nodes[node].kind {
            NodeKind::Leaf { start, end } => {
                for slot in start as usize..end as usize {
                    let e = &self.entries[slot];
                    offer(best, k, (dist2(&e.point, q), e.index, slot));
                }
            }
            NodeKind::Split { left, right } => {
                let (l, r) = (left as usize, right as usize);
                let dl = box_dist2(&self.nodes[l].lo, &self.nodes[l].hi, q);
                let dr = box_dist2(&self.nodes[r].lo, &self.nodes[r].hi, q);
                let order = if dl <= dr { [(l, dl), (r, dr)] } else { [(r, dr), (l, dl)] };
                for (child, d) in order {
                    // Strict comparison: an equal-distance point with a lower
                    // index may still be waiting in the other subtree.
                    if best.len() == k && d > best[k - 1].0 {
                        continue;
                    }
                    self.search(child, q, k, best);
                }
            }
        }
    }
}

fn offer<T: Real>(best: &mut Vec<(T, u32, usize)>, k: usize, cand: (T, u32, usize)) {
    let less = |a: &(T, u32, usize), b: &(T, u32, usize)| a.0 < b.0 || (a.0 == b.0 && a.1 < b.1);
    if best.len() == k {
        if !less(&cand, &best[k - 1]) {
            return;
        }
        best.pop();
    }
    let pos = best.partition_point(|b| less(b, &cand));
    best.insert(pos, cand);
}

fn build_node<T: Real>(entries: &mut [Entry<T>], start: usize, end: usize, leaf_size: usize, nodes: &mut Vec<Node<T>>) -> usize {
    let slice = &entries[start..end];
    let mut lo = slice[0].point;
    let mut hi = slice[0].point;
    for e in &slice[1..] {
        for axis in 0..3 {
            if e.point[axis] < lo[axis] {
                lo[axis] = e.point[axis];
            }
            if e.point[axis] > hi[axis] {
                hi[axis] = e.point[axis];
            }
        }
    }
    let id = nodes.len();
    nodes.push(Node {
        lo,
        hi,
        kind: NodeKind::Leaf {
            start: start as u32,
            end: end as u32,
        },
    });
    if end - start <= leaf_size {
        return id;
    }
    let extent = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let mut axis = 0;
    for a in 1..3 {
        if extent[a] > extent[axis] {
            axis = a;
        }
    }
    let mid = (end - start) / 2;
    entries[start..end].select_nth_unstable_by(mid, |a, b| {
        a.point[axis]
            .partial_cmp(&b.point[axis])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let left = build_node(entries, start, start + mid, leaf_size, nodes);
    let right = build_node(entries, start + mid, end, leaf_size, nodes);
    nodes[id].kind = NodeKind::Split {
        left: left as u32,
        right: right as u32,
    };
    id
}
