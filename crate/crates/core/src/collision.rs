//! KD-tree index over the obstacle point cloud, trajectory collision
//! pruning, and the normalized proximity cost.
//!
//! A candidate collides when any of its sampled points has a cloud point
//! within `r_robot`. Collision-free candidates get a cost in `[0, 1]` driven
//! by the trajectory-wide minimum clearance `ρ`: 1 when the candidate grazes
//! the robot ball, 0 once it clears the extra margin `r_hat`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajgen::TrajectorySegment;

/// Robot ball radius, extra margin, and trajectory discretization.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetyParams {
    /// Enclosing-ball radius plus planning margin [m].
    pub r_robot: f64,
    /// Additional clearance margin beyond `r_robot` [m].
    pub r_hat: f64,
    /// Baseline number of samples per trajectory.
    pub n_discretize: usize,
}

impl Default for SafetyParams {
    fn default() -> Self {
        Self {
            r_robot: 0.45,
            r_hat: 1.0,
            n_discretize: 20,
        }
    }
}

impl SafetyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_robot > 0.0 && self.r_hat >= self.r_robot) {
            return Err(Error::invalid(format!(
                "safety radii must satisfy r_hat >= r_robot > 0, got ({}, {})",
                self.r_robot, self.r_hat
            )));
        }
        if self.n_discretize < 2 {
            return Err(Error::invalid("n_discretize must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    /// Index into `points`.
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

/// Balanced KD-tree over a 3D point cloud. Immutable after build; queries
/// are read-only and safe to run concurrently.
#[derive(Debug, Clone)]
pub struct PointCloudIndex {
    points: Vec<[f64; 3]>,
    nodes: Vec<Node>,
    root: i32,
}

impl PointCloudIndex {
    pub fn build(points: &[Vector3<f64>]) -> Self {
        let pts: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut idx: Vec<u32> = (0..pts.len() as u32).collect();
        let mut nodes = Vec::with_capacity(pts.len());
        let root = Self::build_rec(&pts, &mut idx, 0, &mut nodes);
        Self {
            points: pts,
            nodes,
            root,
        }
    }

    fn build_rec(pts: &[[f64; 3]], idx: &mut [u32], depth: usize, nodes: &mut Vec<Node>) -> i32 {
        if idx.is_empty() {
            return -1;
        }
        let axis = depth % 3;
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            pts[a as usize][axis]
                .partial_cmp(&pts[b as usize][axis])
                .unwrap()
        });
        let point = idx[mid];
        let slot = nodes.len();
        nodes.push(Node {
            point,
            axis: axis as u8,
            left: -1,
            right: -1,
        });
        let (lo, rest) = idx.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = Self::build_rec(pts, lo, depth + 1, nodes);
        let right = Self::build_rec(pts, hi, depth + 1, nodes);
        nodes[slot].left = left;
        nodes[slot].right = right;
        slot as i32
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.points.iter().map(|p| Vector3::new(p[0], p[1], p[2]))
    }

    fn dist_sq(p: &[f64; 3], q: &Vector3<f64>) -> f64 {
        let dx = p[0] - q.x;
        let dy = p[1] - q.y;
        let dz = p[2] - q.z;
        dx * dx + dy * dy + dz * dz
    }

    /// Indices of all points within `radius` of `center`.
    pub fn within_radius(&self, center: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if self.root >= 0 && radius >= 0.0 {
            self.radius_rec(self.root, center, radius * radius, &mut out);
        }
        out
    }

    fn radius_rec(&self, node: i32, center: &Vector3<f64>, r_sq: f64, out: &mut Vec<usize>) {
        let n = &self.nodes[node as usize];
        let p = &self.points[n.point as usize];
        if Self::dist_sq(p, center) <= r_sq {
            out.push(n.point as usize);
        }
        let delta = center[n.axis as usize] - p[n.axis as usize];
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        if near >= 0 {
            self.radius_rec(near, center, r_sq, out);
        }
        if far >= 0 && delta * delta <= r_sq {
            self.radius_rec(far, center, r_sq, out);
        }
    }

    /// Whether any point lies within `radius` of `center` (early exit).
    pub fn any_within(&self, center: &Vector3<f64>, radius: f64) -> bool {
        self.root >= 0 && self.any_rec(self.root, center, radius * radius)
    }

    fn any_rec(&self, node: i32, center: &Vector3<f64>, r_sq: f64) -> bool {
        let n = &self.nodes[node as usize];
        let p = &self.points[n.point as usize];
        if Self::dist_sq(p, center) <= r_sq {
            return true;
        }
        let delta = center[n.axis as usize] - p[n.axis as usize];
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        if near >= 0 && self.any_rec(near, center, r_sq) {
            return true;
        }
        far >= 0 && delta * delta <= r_sq && self.any_rec(far, center, r_sq)
    }

    /// Nearest point to `center`: `(index, distance)`.
    pub fn nearest(&self, center: &Vector3<f64>) -> Option<(usize, f64)> {
        if self.root < 0 {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(self.root, center, &mut best);
        Some((best.0, best.1.sqrt()))
    }

    fn nearest_rec(&self, node: i32, center: &Vector3<f64>, best: &mut (usize, f64)) {
        let n = &self.nodes[node as usize];
        let p = &self.points[n.point as usize];
        let d = Self::dist_sq(p, center);
        if d < best.1 {
            *best = (n.point as usize, d);
        }
        let delta = center[n.axis as usize] - p[n.axis as usize];
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        if near >= 0 {
            self.nearest_rec(near, center, best);
        }
        if far >= 0 && delta * delta < best.1 {
            self.nearest_rec(far, center, best);
        }
    }
}

/// Build the spatial index from a point cloud.
pub fn build_index(points: &[Vector3<f64>]) -> PointCloudIndex {
    PointCloudIndex::build(points)
}

/// Sample count for a segment: the configured baseline, scaled up so sample
/// spacing stays below 0.25 m on long segments.
fn effective_samples(seg: &TrajectorySegment, params: &SafetyParams) -> usize {
    let len = seg.approx_length(20);
    params.n_discretize.max((len / 0.25).ceil() as usize).max(2)
}

/// Whether any sampled trajectory point has a cloud point within `r_robot`.
pub fn is_colliding(
    seg: &TrajectorySegment,
    index: &PointCloudIndex,
    params: &SafetyParams,
) -> bool {
    if index.is_empty() {
        return false;
    }
    let n = effective_samples(seg, params);
    for i in 0..n {
        let t = seg.terminal_time * i as f64 / (n - 1) as f64;
        let p = seg.eval_clamped(t).0.position;
        if index.any_within(&p, params.r_robot) {
            return true;
        }
    }
    false
}

/// Normalized proximity cost from the trajectory-wide minimum clearance.
///
/// `cost = ((1+r̂⁴)·((ρ-r)²-r̂²)²) / (r̂⁴·(1+((ρ-r)²-r̂²)²))` while
/// `ρ - r ≤ r̂`, else 0. The grouping keeps the endpoint identities exact:
/// cost(ρ=r) = 1 and cost(ρ=r+r̂) = 0 in floating point.
pub fn cost_from_clearance(rho: f64, params: &SafetyParams) -> f64 {
    let margin = rho - params.r_robot;
    if margin > params.r_hat {
        return 0.0;
    }
    let rh_sq = params.r_hat * params.r_hat;
    let rh4 = rh_sq * rh_sq;
    let q = {
        let inner = margin * margin - rh_sq;
        inner * inner
    };
    ((1.0 + rh4) * q) / (rh4 * (1.0 + q))
}

/// Collision cost and minimum clearance `ρ` for a (presumed collision-free)
/// segment. An empty cloud yields `(0, +∞)`.
pub fn collision_cost(
    seg: &TrajectorySegment,
    index: &PointCloudIndex,
    params: &SafetyParams,
) -> (f64, f64) {
    if index.is_empty() {
        return (0.0, f64::INFINITY);
    }
    let n = effective_samples(seg, params);
    let mut rho = f64::INFINITY;
    for i in 0..n {
        let t = seg.terminal_time * i as f64 / (n - 1) as f64;
        let p = seg.eval_clamped(t).0.position;
        if let Some((_, d)) = index.nearest(&p) {
            rho = rho.min(d);
        }
    }
    (cost_from_clearance(rho, params), rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajgen::{solve_segment_fixed_time, FlatState};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn straight_segment(from: Vector3<f64>, to: Vector3<f64>) -> TrajectorySegment {
        solve_segment_fixed_time(
            &FlatState::at_rest(from),
            &FlatState::at_rest(to),
            1.0,
            1.0,
        )
        .unwrap()
    }

    fn random_cloud(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                )
            })
            .collect()
    }

    #[test]
    fn empty_cloud_queries() {
        let idx = build_index(&[]);
        assert!(idx.within_radius(&Vector3::zeros(), 10.0).is_empty());
        assert!(!idx.any_within(&Vector3::zeros(), 10.0));
        assert!(idx.nearest(&Vector3::zeros()).is_none());
    }

    #[test]
    fn single_point_containment() {
        let idx = build_index(&[Vector3::zeros()]);
        let hits = idx.within_radius(&Vector3::new(0.0, 0.0, 0.5), 1.0);
        assert_eq!(hits, vec![0]);
    }

    #[test]
    fn radius_queries_match_linear_scan() {
        let cloud = random_cloud(1000, 5);
        let idx = build_index(&cloud);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let c = Vector3::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            );
            let r = rng.gen_range(0.1..4.0);
            let mut got = idx.within_radius(&c, r);
            got.sort_unstable();
            let mut expect: Vec<usize> = cloud
                .iter()
                .enumerate()
                .filter(|(_, p)| (*p - c).norm() <= r)
                .map(|(i, _)| i)
                .collect();
            expect.sort_unstable();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn nearest_matches_linear_scan() {
        let cloud = random_cloud(737, 9);
        let idx = build_index(&cloud);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            let c = Vector3::new(
                rng.gen_range(-6.0..6.0),
                rng.gen_range(-6.0..6.0),
                rng.gen_range(-6.0..6.0),
            );
            let (_, d) = idx.nearest(&c).unwrap();
            let expect = cloud.iter().map(|p| (p - c).norm()).fold(f64::INFINITY, f64::min);
            assert!((d - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn far_obstacle_is_safe() {
        let seg = straight_segment(Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0));
        let idx = build_index(&[Vector3::new(10.0, 0.0, 0.0)]);
        let params = SafetyParams {
            r_robot: 0.5,
            ..Default::default()
        };
        assert!(!is_colliding(&seg, &idx, &params));
    }

    #[test]
    fn midpoint_obstacle_collides() {
        let seg = straight_segment(Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0));
        let idx = build_index(&[Vector3::new(0.5, 0.0, 0.0)]);
        assert!(is_colliding(&seg, &idx, &SafetyParams::default()));
    }

    #[test]
    fn perpendicular_offset_threshold() {
        // Point-to-segment distance oracle: the path runs along x, so the
        // clearance is the perpendicular offset (up to sampling resolution).
        let seg = straight_segment(Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0));
        let params = SafetyParams {
            r_robot: 0.5,
            r_hat: 1.0,
            n_discretize: 20,
        };
        let near = build_index(&[Vector3::new(0.5, 0.49, 0.0)]);
        assert!(is_colliding(&seg, &near, &params));
        let far = build_index(&[Vector3::new(0.5, 0.51, 0.0)]);
        assert!(!is_colliding(&seg, &far, &params));
    }

    #[test]
    fn cost_endpoints_exact() {
        let params = SafetyParams {
            r_robot: 0.5,
            r_hat: 1.0,
            n_discretize: 20,
        };
        assert_eq!(cost_from_clearance(params.r_robot, &params), 1.0);
        assert_eq!(cost_from_clearance(params.r_robot + params.r_hat, &params), 0.0);
    }

    #[test]
    fn cost_mid_value() {
        let params = SafetyParams {
            r_robot: 0.5,
            r_hat: 1.0,
            n_discretize: 20,
        };
        let c = cost_from_clearance(1.0, &params);
        assert!((c - 0.72).abs() < 1e-12, "cost = {c}");
    }

    #[test]
    fn cost_monotone_and_clipped() {
        let params = SafetyParams {
            r_robot: 0.4,
            r_hat: 0.9,
            n_discretize: 20,
        };
        let mut prev = f64::INFINITY;
        for i in 0..=900 {
            let rho = params.r_robot + params.r_hat * i as f64 / 900.0;
            let c = cost_from_clearance(rho, &params);
            assert!(c <= prev + 1e-12, "cost rose at rho = {rho}");
            assert!((0.0..=1.0).contains(&c));
            prev = c;
        }
        assert_eq!(cost_from_clearance(params.r_robot + params.r_hat + 0.01, &params), 0.0);
        assert_eq!(cost_from_clearance(10.0, &params), 0.0);
    }

    #[test]
    fn empty_cloud_cost() {
        let seg = straight_segment(Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0));
        let idx = build_index(&[]);
        let (c, rho) = collision_cost(&seg, &idx, &SafetyParams::default());
        assert_eq!(c, 0.0);
        assert!(rho.is_infinite());
    }

    #[test]
    fn colliding_monotone_in_radius() {
        let seg = straight_segment(Vector3::zeros(), Vector3::new(2.0, 0.0, 0.0));
        let cloud = random_cloud(300, 21);
        let idx = build_index(&cloud);
        let mut was_colliding = false;
        for r in [0.05, 0.1, 0.2, 0.4, 0.8, 1.6] {
            let params = SafetyParams {
                r_robot: r,
                r_hat: r,
                n_discretize: 20,
            };
            let now = is_colliding(&seg, &idx, &params);
            assert!(
                now || !was_colliding,
                "enlarging r_robot turned colliding into safe at r = {r}"
            );
            was_colliding = now;
        }
    }
}
