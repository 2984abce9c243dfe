//! Points, clouds, bounding boxes, spatial indexing, and patch extraction.
//!
//! All distances are Euclidean and all math is double precision. The
//! [`SpatialIndex`] is a kd-tree whose query results are defined to be
//! identical to an exhaustive scan, with ties broken by lower point index.

use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BinaryHeap;

/// A 3D point in model units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(self, o: Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Point3) -> Point3 {
        Point3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist_sq(self, o: Point3) -> f64 {
        (self - o).norm_sq()
    }

    pub fn dist(self, o: Point3) -> f64 {
        self.dist_sq(o).sqrt()
    }
}

impl std::ops::Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// An ordered list of 3D points with optional per-point binary outlier labels.
#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    points: Vec<Point3>,
    labels: Option<Vec<bool>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Point3>) -> Self {
        PointCloud {
            points,
            labels: None,
        }
    }

    /// Builds a labeled cloud; the label sequence must match the point count.
    pub fn with_labels(points: Vec<Point3>, labels: Vec<bool>) -> Result<Self> {
        if labels.len() != points.len() {
            return Err(Error::LengthMismatch {
                what: "labels vs points",
                expected: points.len(),
                got: labels.len(),
            });
        }
        Ok(PointCloud {
            points,
            labels: Some(labels),
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

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    pub fn point(&self, i: usize) -> Point3 {
        self.points[i]
    }

    /// Rejects clouds containing non-finite coordinates.
    pub fn validate_finite(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "point {i} has non-finite coordinates"
                )));
            }
        }
        Ok(())
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min: Point3,
    pub max: Point3,
}

impl BoundingBox {
    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    pub fn center(&self) -> Point3 {
        (self.min + self.max) * 0.5
    }

    /// The box scaled about its center by `factor` in every axis.
    pub fn expanded(&self, factor: f64) -> BoundingBox {
        let c = self.center();
        let half = (self.max - self.min) * (0.5 * factor);
        BoundingBox {
            min: c - half,
            max: c + half,
        }
    }
}

/// Componentwise extrema of a non-empty cloud.
pub fn bounding_box(cloud: &PointCloud) -> Result<BoundingBox> {
    let first = *cloud.points().first().ok_or(Error::EmptyCloud)?;
    let mut min = first;
    let mut max = first;
    for p in cloud.points() {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        min.z = min.z.min(p.z);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
        max.z = max.z.max(p.z);
    }
    Ok(BoundingBox { min, max })
}

/// Candidate ordering used everywhere a neighbor set is selected:
/// by squared distance, then by point index.
fn closer(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist_sq: f64,
    index: usize,
}

// Max-heap order on (dist_sq, index), so the heap root is the current worst.
impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.dist_sq == other.dist_sq && self.index == other.index
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.dist_sq
            .partial_cmp(&other.dist_sq)
            .expect("non-finite distance in spatial index")
            .then(self.index.cmp(&other.index))
    }
}

#[derive(Debug, Clone)]
struct KdNode {
    point_index: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

/// kd-tree over the points of one cloud. Immutable after construction and
/// safe for concurrent read queries.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    nodes: Vec<KdNode>,
    root: Option<usize>,
    points: Vec<Point3>,
}

impl SpatialIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let points = cloud.points().to_vec();
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build_rec(&points, &mut order[..], 0, &mut nodes);
        Ok(SpatialIndex {
            nodes,
            root,
            points,
        })
    }

    fn build_rec(
        points: &[Point3],
        order: &mut [usize],
        depth: usize,
        nodes: &mut Vec<KdNode>,
    ) -> Option<usize> {
        if order.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            let ka = (coord(points[a], axis), a);
            let kb = (coord(points[b], axis), b);
            ka.partial_cmp(&kb).expect("non-finite coordinate")
        });
        let point_index = order[mid];
        let (left_slice, rest) = order.split_at_mut(mid);
        let right_slice = &mut rest[1..];
        let slot = nodes.len();
        nodes.push(KdNode {
            point_index,
            axis,
            left: None,
            right: None,
        });
        let left = Self::build_rec(points, left_slice, depth + 1, nodes);
        let right = Self::build_rec(points, right_slice, depth + 1, nodes);
        nodes[slot].left = left;
        nodes[slot].right = right;
        Some(slot)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `min(k, n)` nearest points to `query`, sorted by (distance, index).
    pub fn k_nearest(&self, query: Point3, k: usize) -> Vec<(usize, f64)> {
        self.k_nearest_filtered(query, k, None)
    }

    /// Like [`Self::k_nearest`] but never returns `exclude`.
    pub fn k_nearest_excluding(
        &self,
        query: Point3,
        k: usize,
        exclude: usize,
    ) -> Vec<(usize, f64)> {
        self.k_nearest_filtered(query, k, Some(exclude))
    }

    fn k_nearest_filtered(
        &self,
        query: Point3,
        k: usize,
        exclude: Option<usize>,
    ) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        if let Some(root) = self.root {
            self.knn_rec(root, query, k, exclude, &mut heap);
        }
        let mut out: Vec<(usize, f64)> = heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| (c.index, c.dist_sq.sqrt()))
            .collect();
        out.sort_by(|a, b| {
            (a.1, a.0)
                .partial_cmp(&(b.1, b.0))
                .expect("non-finite distance")
        });
        out
    }

    fn knn_rec(
        &self,
        node_id: usize,
        query: Point3,
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        let node = &self.nodes[node_id];
        let p = self.points[node.point_index];
        if exclude != Some(node.point_index) {
            let cand = Candidate {
                dist_sq: query.dist_sq(p),
                index: node.point_index,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if let Some(worst) = heap.peek() {
                if closer((cand.dist_sq, cand.index), (worst.dist_sq, worst.index)) {
                    heap.pop();
                    heap.push(cand);
                }
            }
        }
        let delta = coord(query, node.axis) - coord(p, node.axis);
        let (near, far) = if delta <= 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            self.knn_rec(n, query, k, exclude, heap);
        }
        // The far side may still hold an equal-distance candidate with a
        // lower index, so prune only on a strict distance excess.
        let visit_far = match heap.peek() {
            _ if heap.len() < k => true,
            Some(worst) => delta * delta <= worst.dist_sq,
            None => true,
        };
        if visit_far {
            if let Some(f) = far {
                self.knn_rec(f, query, k, exclude, heap);
            }
        }
    }

    /// All points with distance ≤ `radius` from `query` (inclusive),
    /// sorted by (distance, index).
    pub fn radius(&self, query: Point3, radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let r_sq = radius * radius;
        if let Some(root) = self.root {
            self.radius_rec(root, query, radius, r_sq, &mut out);
        }
        out.sort_by(|a, b| {
            (a.1, a.0)
                .partial_cmp(&(b.1, b.0))
                .expect("non-finite distance")
        });
        out
    }

    fn radius_rec(
        &self,
        node_id: usize,
        query: Point3,
        radius: f64,
        r_sq: f64,
        out: &mut Vec<(usize, f64)>,
    ) {
        let node = &self.nodes[node_id];
        let p = self.points[node.point_index];
        let d_sq = query.dist_sq(p);
        if d_sq <= r_sq {
            out.push((node.point_index, d_sq.sqrt()));
        }
        let delta = coord(query, node.axis) - coord(p, node.axis);
        if delta <= radius {
            if let Some(l) = node.left {
                self.radius_rec(l, query, radius, r_sq, out);
            }
        }
        if -delta <= radius {
            if let Some(r) = node.right {
                self.radius_rec(r, query, radius, r_sq, out);
            }
        }
    }
}

fn coord(p: Point3, axis: usize) -> f64 {
    match axis {
        0 => p.x,
        1 => p.y,
        _ => p.z,
    }
}

/// Convenience wrapper for the spatial index construction contract.
pub fn build_spatial_index(cloud: &PointCloud) -> Result<SpatialIndex> {
    SpatialIndex::build(cloud)
}

/// A fixed-size local neighborhood of a center point, normalized into a
/// canonical frame: coordinates are centered on the center point and divided
/// by `scale`, so every point lies within the unit ball.
///
/// `points[0]` is always the center itself (the origin in patch
/// coordinates); padding repeats the center.
#[derive(Debug, Clone)]
pub struct Patch {
    pub center_index: usize,
    pub points: Vec<Point3>,
    pub scale: f64,
    pub centroid_offset: Point3,
}

impl Patch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Maps a patch-frame point back to world coordinates. Exactly inverts
    /// the normalization applied during extraction.
    pub fn denormalize(&self, q: Point3) -> Point3 {
        q * self.scale + self.centroid_offset
    }

    /// Maps a patch-frame displacement vector to world units (rotation-free
    /// part of denormalization: no centroid offset).
    pub fn denormalize_vector(&self, v: Point3) -> Point3 {
        v * self.scale
    }
}

/// Extracts the ball of `radius` around `cloud[center_index]`, subsampled
/// uniformly without replacement down to `m` points when larger (the center
/// always survives), padded by repeating the center when smaller.
pub fn extract_patch(
    cloud: &PointCloud,
    index: &SpatialIndex,
    center_index: usize,
    radius: f64,
    m: usize,
    rng_seed: u64,
) -> Result<Patch> {
    check_patch_args(cloud, center_index, radius, m)?;
    let center = cloud.point(center_index);
    let members: Vec<(usize, f64)> = index
        .radius(center, radius)
        .into_iter()
        .filter(|&(i, _)| i != center_index)
        .collect();
    Ok(assemble_patch(
        cloud,
        center_index,
        center,
        members,
        radius,
        m,
        rng_seed,
    ))
}

/// Patch extraction that falls back to the `fallback_k` nearest points
/// cloud-wide when the ball holds fewer than `min_ball_points` points
/// (counting the center). The fallback patch is normalized by the distance
/// of its farthest member so the unit-ball invariant still holds.
pub fn extract_patch_or_knn(
    cloud: &PointCloud,
    index: &SpatialIndex,
    center_index: usize,
    radius: f64,
    m: usize,
    min_ball_points: usize,
    rng_seed: u64,
) -> Result<Patch> {
    check_patch_args(cloud, center_index, radius, m)?;
    let center = cloud.point(center_index);
    let in_ball: Vec<(usize, f64)> = index
        .radius(center, radius)
        .into_iter()
        .filter(|&(i, _)| i != center_index)
        .collect();
    if in_ball.len() + 1 >= min_ball_points {
        return Ok(assemble_patch(
            cloud,
            center_index,
            center,
            in_ball,
            radius,
            m,
            rng_seed,
        ));
    }
    let fallback_k = min_ball_points.saturating_sub(1).min(cloud.len() - 1);
    let members = index.k_nearest_excluding(center, fallback_k, center_index);
    let mut scale = members.last().map(|&(_, d)| d).unwrap_or(0.0);
    if scale <= 0.0 {
        // Every selected neighbor coincides with the center; any positive
        // scale yields the same all-zero patch.
        scale = radius;
    }
    Ok(assemble_patch(
        cloud,
        center_index,
        center,
        members,
        scale,
        m,
        rng_seed,
    ))
}

fn check_patch_args(
    cloud: &PointCloud,
    center_index: usize,
    radius: f64,
    m: usize,
) -> Result<()> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if center_index >= cloud.len() {
        return Err(Error::IndexOutOfRange {
            index: center_index,
            len: cloud.len(),
        });
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "patch radius must be positive, got {radius}"
        )));
    }
    if m < 1 {
        return Err(Error::InvalidArgument("patch size m must be >= 1".into()));
    }
    Ok(())
}

/// `members` are (index, distance) pairs sorted by (distance, index),
/// excluding the center itself.
fn assemble_patch(
    cloud: &PointCloud,
    center_index: usize,
    center: Point3,
    members: Vec<(usize, f64)>,
    scale: f64,
    m: usize,
    rng_seed: u64,
) -> Patch {
    let selected: Vec<usize> = if members.len() > m - 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut picks = rand::seq::index::sample(&mut rng, members.len(), m - 1).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| members[i].0).collect()
    } else {
        members.iter().map(|&(i, _)| i).collect()
    };

    let inv = 1.0 / scale;
    let mut points = Vec::with_capacity(m);
    points.push(Point3::new(0.0, 0.0, 0.0));
    points.extend(selected.iter().map(|&i| (cloud.point(i) - center) * inv));
    while points.len() < m {
        points.push(Point3::new(0.0, 0.0, 0.0));
    }
    Patch {
        center_index,
        points,
        scale,
        centroid_offset: center,
    }
}
