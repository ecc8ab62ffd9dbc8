//! Static, balanced KD-tree over a point cloud with exact nearest, k-nearest
//! and radius queries.
//!
//! The tree is stored implicitly: `order` is a permutation of the point
//! indices such that for any subrange `[lo, hi)` the node sits at
//! `mid = (lo + hi) / 2`, its left subtree is `[lo, mid)` and its right
//! subtree `[mid + 1, hi)`. Each node splits on the axis of widest extent of
//! its subrange, at the median coordinate; ties on the coordinate are broken
//! by point index so the build is deterministic.
//!
//! All queries break distance ties by the lower point index, and report
//! distances as `sqrt` of the squared Euclidean distance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

/// Query hit: point index into the source cloud and Euclidean distance (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
    order: Vec<u32>,
    axes: Vec<u8>,
}

#[inline]
fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

/// (squared distance, index), ordered lexicographically.
#[derive(Clone, Copy, PartialEq)]
struct Candidate(f64, u32);

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .total_cmp(&other.0)
            .then_with(|| self.1.cmp(&other.1))
    }
}

impl KdTree {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        Self::from_points(cloud.points())
    }

    pub fn from_points(points: &[Point3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if points.len() > u32::MAX as usize {
            return Err(Error::invalid("cloud too large for a KD-tree"));
        }
        let points = points.to_vec();
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut axes = vec![0u8; points.len()];
        build_range(&points, &mut order, &mut axes, 0);
        Ok(Self {
            points,
            order,
            axes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// Maximum root-to-leaf node count.
    pub fn depth(&self) -> usize {
        fn go(lo: usize, hi: usize) -> usize {
            if lo >= hi {
                return 0;
            }
            let mid = (lo + hi) / 2;
            1 + go(lo, mid).max(go(mid + 1, hi))
        }
        go(0, self.order.len())
    }

    /// Checks the split invariants and that every index appears exactly once.
    pub fn validate(&self) -> bool {
        let mut seen = vec![false; self.points.len()];
        for &i in &self.order {
            if std::mem::replace(&mut seen[i as usize], true) {
                return false;
            }
        }
        self.validate_range(0, self.order.len())
    }

    fn validate_range(&self, lo: usize, hi: usize) -> bool {
        if hi - lo <= 1 {
            return true;
        }
        let mid = (lo + hi) / 2;
        let axis = self.axes[mid] as usize;
        let split = self.points[self.order[mid] as usize][axis];
        let left_ok = self.order[lo..mid]
            .iter()
            .all(|&i| self.points[i as usize][axis] <= split);
        let right_ok = self.order[mid + 1..hi]
            .iter()
            .all(|&i| self.points[i as usize][axis] >= split);
        left_ok && right_ok && self.validate_range(lo, mid) && self.validate_range(mid + 1, hi)
    }

    /// Nearest indexed point to `q`; ties go to the lower index.
    pub fn nearest(&self, q: &Point3) -> Neighbor {
        let mut best = Candidate(f64::INFINITY, u32::MAX);
        self.nearest_range(q, 0, self.order.len(), &mut best);
        Neighbor {
            index: best.1 as usize,
            distance: best.0.sqrt(),
        }
    }

    /// [`KdTree::nearest`] restricted to points within `r`; far queries
    /// prune early instead of walking much of the tree.
    pub fn nearest_within(&self, q: &Point3, r: f64) -> Option<Neighbor> {
        let mut best = Candidate(r * r, u32::MAX);
        self.nearest_range(q, 0, self.order.len(), &mut best);
        (best.1 != u32::MAX).then(|| Neighbor {
            index: best.1 as usize,
            distance: best.0.sqrt(),
        })
    }

    fn nearest_range(&self, q: &Point3, lo: usize, hi: usize, best: &mut Candidate) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx as usize];
        let c = Candidate(dist2(p, q), idx);
        if c < *best {
            *best = c;
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_range(q, near.0, near.1, best);
        // Equal plane distance must still be visited for the index tie rule.
        if diff * diff <= best.0 {
            self.nearest_range(q, far.0, far.1, best);
        }
    }

    /// The `k` nearest points in ascending (distance, index) order.
    pub fn k_nearest(&self, q: &Point3, k: usize) -> Result<Vec<Neighbor>> {
        if k == 0 || k > self.points.len() {
            return Err(Error::NeighborCount {
                k,
                size: self.points.len(),
            });
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_range(q, k, 0, self.order.len(), &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        Ok(out
            .into_iter()
            .map(|c| Neighbor {
                index: c.1 as usize,
                distance: c.0.sqrt(),
            })
            .collect())
    }

    fn knn_range(
        &self,
        q: &Point3,
        k: usize,
        lo: usize,
        hi: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx as usize];
        let c = Candidate(dist2(p, q), idx);
        if heap.len() < k {
            heap.push(c);
        } else if c < *heap.peek().expect("heap holds k > 0 items") {
            heap.pop();
            heap.push(c);
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.knn_range(q, k, near.0, near.1, heap);
        let bound = if heap.len() < k {
            f64::INFINITY
        } else {
            heap.peek().map_or(f64::INFINITY, |c| c.0)
        };
        if diff * diff <= bound {
            self.knn_range(q, k, far.0, far.1, heap);
        }
    }

    /// All points with distance `<= r`, ascending by (distance, index).
    pub fn radius_search(&self, q: &Point3, r: f64) -> Vec<Neighbor> {
        let mut out: Vec<Candidate> = Vec::new();
        if !(r >= 0.0) {
            return Vec::new();
        }
        self.radius_range(q, r, 0, self.order.len(), &mut out);
        out.sort();
        out.into_iter()
            .map(|c| Neighbor {
                index: c.1 as usize,
                distance: c.0.sqrt(),
            })
            .collect()
    }

    fn radius_range(&self, q: &Point3, r: f64, lo: usize, hi: usize, out: &mut Vec<Candidate>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx as usize];
        let d2 = dist2(p, q);
        if d2.sqrt() <= r {
            out.push(Candidate(d2, idx));
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        // Slack keeps pruning conservative against sqrt rounding at |diff| ≈ r.
        let reach = r * (1.0 + 1e-12) + f64::MIN_POSITIVE;
        if diff <= 0.0 || diff.abs() <= reach {
            self.radius_range(q, r, lo, mid, out);
        }
        if diff >= 0.0 || diff.abs() <= reach {
            self.radius_range(q, r, mid + 1, hi, out);
        }
    }
}

fn build_range(points: &[Point3], order: &mut [u32], axes: &mut [u8], offset: usize) {
    let n = order.len();
    if n == 0 {
        return;
    }
    let mid = n / 2;
    if n > 1 {
        let axis = widest_axis(points, order);
        order.select_nth_unstable_by(mid, |&a, &b| {
            points[a as usize][axis]
                .total_cmp(&points[b as usize][axis])
                .then(a.cmp(&b))
        });
        axes[offset + mid] = axis as u8;
    }
    let (left, rest) = order.split_at_mut(mid);
    build_range(points, left, axes, offset);
    build_range(points, &mut rest[1..], axes, offset + mid + 1);
}

fn widest_axis(points: &[Point3], order: &[u32]) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order {
        let p = &points[i as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let ext = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    // First axis wins ties.
    let mut best = 0;
    for a in 1..3 {
        if ext[a] > ext[best] {
            best = a;
        }
    }
    best
}
