//! Immutable kd-tree over a point cloud with exact radius and k-nearest
//! queries. Queries return precisely the brute-force result set; the tree only
//! changes the visit order.

use nalgebra::Vector3;

use crate::cloud::PointCloud;

struct Node {
    /// Point index at this node (median along `axis`).
    index: u32,
    axis: u8,
    left: i32,
    right: i32,
}

/// Spatial acceleration structure. Immutable after construction and safe for
/// concurrent read queries.
pub struct SpatialIndex {
    points: Vec<Vector3<f64>>,
    nodes: Vec<Node>,
    root: i32,
}

impl SpatialIndex {
    pub fn build(cloud: &PointCloud) -> Self {
        let points = cloud.points().to_vec();
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build_rec(&points, &mut order[..], 0, &mut nodes);
        Self { points, nodes, root }
    }

    fn build_rec(points: &[Vector3<f64>], order: &mut [u32], depth: usize, nodes: &mut Vec<Node>) -> i32 {
        if order.is_empty() {
            return -1;
        }
        let axis = (depth % 3) as u8;
        let mid = order.len() / 2;
        // Index tiebreak keeps the structure deterministic for duplicates.
        order.select_nth_unstable_by(mid, |&a, &b| {
            let pa = points[a as usize][axis as usize];
            let pb = points[b as usize][axis as usize];
            pa.partial_cmp(&pb).expect("finite").then(a.cmp(&b))
        });
        let index = order[mid];
        let id = nodes.len() as i32;
        nodes.push(Node {
            index,
            axis,
            left: -1,
            right: -1,
        });
        let (lo, rest) = order.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = Self::build_rec(points, lo, depth + 1, nodes);
        let right = Self::build_rec(points, hi, depth + 1, nodes);
        nodes[id as usize].left = left;
        nodes[id as usize].right = right;
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> Vector3<f64> {
        self.points[index]
    }

    /// All indices with ‖p − query‖ ≤ r, in ascending index order.
    pub fn radius_neighbors(&self, query: &Vector3<f64>, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if r < 0.0 || self.root < 0 {
            return out;
        }
        let r2 = r * r;
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            let p = &self.points[node.index as usize];
            if (p - query).norm_squared() <= r2 {
                out.push(node.index as usize);
            }
            let delta = query[node.axis as usize] - p[node.axis as usize];
            // The splitting plane passes through p; descend both sides when
            // the ball straddles it (ties included for the ≤ boundary).
            if delta <= r && node.left >= 0 {
                stack.push(node.left);
            }
            if delta >= -r && node.right >= 0 {
                stack.push(node.right);
            }
        }
        out.sort_unstable();
        out
    }

    /// The k nearest indices to `query` (including an exact-coincident point),
    /// ordered by distance then index. Returns fewer when the cloud is small.
    pub fn k_nearest(&self, query: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.root < 0 {
            return Vec::new();
        }
        // Max-heap of (dist2, index) capped at k.
        let mut heap: std::collections::BinaryHeap<(Ordered, usize)> = std::collections::BinaryHeap::new();
        self.knn_rec(self.root, query, k, &mut heap);
        let mut items: Vec<(usize, f64)> = heap.into_iter().map(|(d, i)| (i, d.0.sqrt())).collect();
        items.sort_unstable_by(|a, b| a.1.partial_cmp(&b.1).expect("finite").then(a.0.cmp(&b.0)));
        items
    }

    fn knn_rec(
        &self,
        id: i32,
        query: &Vector3<f64>,
        k: usize,
        heap: &mut std::collections::BinaryHeap<(Ordered, usize)>,
    ) {
        let node = &self.nodes[id as usize];
        let p = &self.points[node.index as usize];
        let d2 = (p - query).norm_squared();
        if heap.len() < k {
            heap.push((Ordered(d2), node.index as usize));
        } else if let Some(&(worst, _)) = heap.peek() {
            if d2 < worst.0 {
                heap.pop();
                heap.push((Ordered(d2), node.index as usize));
            }
        }
        let delta = query[node.axis as usize] - p[node.axis as usize];
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if near >= 0 {
            self.knn_rec(near, query, k, heap);
        }
        let need_far = heap.len() < k
            || heap
                .peek()
                .map(|&(worst, _)| delta * delta <= worst.0)
                .unwrap_or(true);
        if far >= 0 && need_far {
            self.knn_rec(far, query, k, heap);
        }
    }
}

/// f64 wrapper with total order for heap use; distances are always finite.
#[derive(Clone, Copy, PartialEq)]
struct Ordered(f64);

impl Eq for Ordered {}

impl PartialOrd for Ordered {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ordered {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.partial_cmp(&other.0).expect("finite distance")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::PointCloud;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn brute_radius(points: &[Vector3<f64>], q: &Vector3<f64>, r: f64) -> Vec<usize> {
        points
            .iter()
            .enumerate()
            .filter(|(_, p)| (*p - q).norm() <= r)
            .map(|(i, _)| i)
            .collect()
    }

    #[test]
    fn radius_examples() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(3.0, 0.0, 0.0),
        ];
        let cloud = PointCloud::from_points(pts).unwrap();
        let index = SpatialIndex::build(&cloud);
        assert_eq!(index.radius_neighbors(&Vector3::zeros(), 1.5), vec![0, 1]);
        // r = 0 returns only coincident points (boundary is inclusive).
        assert_eq!(index.radius_neighbors(&Vector3::new(1.0, 0.0, 0.0), 0.0), vec![1]);
    }

    #[test]
    fn radius_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pts: Vec<_> = (0..5_000)
            .map(|_| Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()))
            .collect();
        let cloud = PointCloud::from_points(pts.clone()).unwrap();
        let index = SpatialIndex::build(&cloud);
        for _ in 0..100 {
            let q = Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            let r = rng.gen::<f64>() * 0.3;
            assert_eq!(index.radius_neighbors(&q, r), brute_radius(&pts, &q, r));
        }
    }

    #[test]
    fn knn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let pts: Vec<_> = (0..800)
            .map(|_| Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()))
            .collect();
        let cloud = PointCloud::from_points(pts.clone()).unwrap();
        let index = SpatialIndex::build(&cloud);
        for _ in 0..50 {
            let q = Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            let k = rng.gen_range(1..40);
            let got = index.k_nearest(&q, k);
            let mut dists: Vec<f64> = pts.iter().map(|p| (p - q).norm()).collect();
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(got.len(), k);
            for (j, (_, d)) in got.iter().enumerate() {
                assert!((d - dists[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn knn_with_duplicates() {
        let pts = vec![Vector3::zeros(); 6];
        let cloud = PointCloud::from_points(pts).unwrap();
        let index = SpatialIndex::build(&cloud);
        let got = index.k_nearest(&Vector3::zeros(), 3);
        assert_eq!(got.len(), 3);
        for (_, d) in got {
            assert_eq!(d, 0.0);
        }
    }
}
