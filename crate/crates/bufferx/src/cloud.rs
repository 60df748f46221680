//! Point-cloud container and foundational geometry: voxel-grid downsampling,
//! covariance PCA, and farthest point sampling.

use nalgebra::{Matrix3, Vector3};
use std::collections::HashMap;

use crate::error::{Error, Result};

/// Maximum voxel-key magnitude per axis. Coordinates further than this many
/// voxels from the origin would risk silent key collisions, so they error out.
const MAX_VOXEL_KEY: i64 = 1 << 20;

/// An unordered set of 3D points in meters, with optional per-point intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    intensity: Option<Vec<f32>>,
}

impl PointCloud {
    /// Builds a cloud, rejecting non-finite coordinates and mismatched
    /// intensity cardinality.
    pub fn new(points: Vec<Vector3<f64>>, intensity: Option<Vec<f32>>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "non-finite coordinate at point {i}"
                )));
            }
        }
        if let Some(ints) = &intensity {
            if ints.len() != points.len() {
                return Err(Error::InvalidParameter(format!(
                    "intensity length {} != point count {}",
                    ints.len(),
                    points.len()
                )));
            }
        }
        Ok(Self { points, intensity })
    }

    pub fn from_points(points: Vec<Vector3<f64>>) -> Result<Self> {
        Self::new(points, None)
    }

    /// Internal constructor for points already known to be finite.
    pub(crate) fn from_points_unchecked(points: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            intensity: None,
        }
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn intensity(&self) -> Option<&[f32]> {
        self.intensity.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum: Vector3<f64> = self.points.iter().sum();
        Some(sum / self.points.len() as f64)
    }
}

/// Eigendecomposition of a cloud's point covariance, eigenvalues sorted
/// descending, eigenvectors forming a right-handed orthonormal basis.
#[derive(Debug, Clone)]
pub struct PcaFrame {
    /// (λ1, λ2, λ3) with λ1 ≥ λ2 ≥ λ3 ≥ 0, in squared meters.
    pub eigenvalues: [f64; 3],
    /// Unit eigenvectors matching `eigenvalues`; [v1 v2 v3] has det +1.
    pub eigenvectors: [Vector3<f64>; 3],
    /// Mean of the analyzed points.
    pub mean: Vector3<f64>,
}

impl PcaFrame {
    pub fn v3(&self) -> Vector3<f64> {
        self.eigenvectors[2]
    }

    /// λ3/λ1; ≈1 for isotropic clouds, ≈0 for disc-like sweeps.
    pub fn sphericity(&self) -> f64 {
        self.eigenvalues[2] / self.eigenvalues[0]
    }
}

fn voxel_key(p: &Vector3<f64>, v: f64) -> Result<(i64, i64, i64)> {
    let mut key = [0i64; 3];
    for a in 0..3 {
        let k = (p[a] / v).floor();
        if !(-(MAX_VOXEL_KEY as f64)..=(MAX_VOXEL_KEY as f64)).contains(&k) {
            return Err(Error::OutOfRange(format!(
                "coordinate {} exceeds {} voxels of size {}",
                p[a], MAX_VOXEL_KEY, v
            )));
        }
        key[a] = k as i64;
    }
    Ok((key[0], key[1], key[2]))
}

/// Downsamples to one point per occupied voxel: the centroid of that voxel's
/// members. Output is sorted by voxel key, and per-voxel members are summed in
/// coordinate-sorted order so the result is bit-identical under any input
/// permutation.
pub fn voxel_downsample(cloud: &PointCloud, v: f64) -> Result<PointCloud> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::InvalidParameter(format!("voxel size {v} must be positive")));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyInput("voxel_downsample on empty cloud".into()));
    }

    let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in cloud.points().iter().enumerate() {
        cells.entry(voxel_key(p, v)?).or_default().push(i);
    }

    let mut keys: Vec<_> = cells.keys().copied().collect();
    keys.sort_unstable();

    let mut out = Vec::with_capacity(keys.len());
    for key in keys {
        let members = &cells[&key];
        let mut pts: Vec<&Vector3<f64>> = members.iter().map(|&i| &cloud.points()[i]).collect();
        pts.sort_unstable_by(|a, b| {
            (a.x, a.y, a.z)
                .partial_cmp(&(b.x, b.y, b.z))
                .expect("finite coordinates")
        });
        let mut sum = Vector3::zeros();
        for p in &pts {
            sum += **p;
        }
        out.push(sum / pts.len() as f64);
    }
    Ok(PointCloud::from_points_unchecked(out))
}

/// Orients `v` deterministically: by the sign of the summed point projections
/// when that sum is meaningfully nonzero (for centered data it is ~0), else by
/// forcing the largest-magnitude component positive.
fn orient_eigenvector(v: Vector3<f64>, points: &[Vector3<f64>], mean: &Vector3<f64>) -> Vector3<f64> {
    let mut sum = 0.0;
    let mut sum_abs = 0.0;
    for p in points {
        let proj = (p - mean).dot(&v);
        sum += proj;
        sum_abs += proj.abs();
    }
    if sum.abs() > 1e-9 * sum_abs.max(f64::MIN_POSITIVE) {
        return if sum >= 0.0 { v } else { -v };
    }
    let mut axis = 0;
    for a in 1..3 {
        if v[a].abs() > v[axis].abs() {
            axis = a;
        }
    }
    if v[axis] < 0.0 {
        -v
    } else {
        v
    }
}

/// Eigendecomposition of the point covariance C = (1/N) Σ (p−μ)(p−μ)ᵀ.
///
/// Errors when all points are identical (λ1 = 0, sphericity undefined).
pub fn pca(cloud: &PointCloud) -> Result<PcaFrame> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("pca on empty cloud".into()));
    }
    let n = cloud.len() as f64;
    let mean = cloud.centroid().unwrap();

    let mut cov = Matrix3::zeros();
    for p in cloud.points() {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;

    let eigen = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_unstable_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .expect("finite eigenvalues")
    });

    // Tiny negative eigenvalues from rounding on rank-deficient clouds.
    let eigenvalues = [
        eigen.eigenvalues[order[0]].max(0.0),
        eigen.eigenvalues[order[1]].max(0.0),
        eigen.eigenvalues[order[2]].max(0.0),
    ];
    if eigenvalues[0] <= 0.0 {
        return Err(Error::DegenerateGeometry(
            "all points identical; covariance has zero spectrum".into(),
        ));
    }

    let v1 = orient_eigenvector(eigen.eigenvectors.column(order[0]).into_owned(), cloud.points(), &mean);
    let v2 = orient_eigenvector(eigen.eigenvectors.column(order[1]).into_owned(), cloud.points(), &mean);
    // Right-handed basis: v3 follows from v1 × v2 (flips the raw eigenvector
    // when needed).
    let v3 = v1.cross(&v2).normalize();

    Ok(PcaFrame {
        eigenvalues,
        eigenvectors: [v1, v2, v3],
        mean,
    })
}

/// Greedy farthest point sampling. The first index is the point farthest from
/// the centroid (ties to the lowest index); every later pick maximizes the
/// minimum distance to the already-selected set.
pub fn farthest_point_sampling(cloud: &PointCloud, n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidParameter("fps sample count must be >= 1".into()));
    }
    let centroid = cloud
        .centroid()
        .ok_or_else(|| Error::EmptyInput("fps on empty cloud".into()))?;
    let mut start = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, p) in cloud.points().iter().enumerate() {
        let d = (p - centroid).norm_squared();
        if d > best {
            best = d;
            start = i;
        }
    }
    fps_from_start(cloud, n, start)
}

/// FPS with an explicit start index; the per-scale embedder uses distinct
/// starts to decorrelate scale samples without randomness.
pub(crate) fn fps_from_start(cloud: &PointCloud, n: usize, start: usize) -> Result<Vec<usize>> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("fps on empty cloud".into()));
    }
    let points = cloud.points();
    if n >= points.len() {
        return Ok((0..points.len()).collect());
    }

    let mut selected = Vec::with_capacity(n);
    let mut min_dist = vec![f64::INFINITY; points.len()];
    let mut current = start.min(points.len() - 1);
    selected.push(current);

    for _ in 1..n {
        let base = points[current];
        let mut next = 0;
        let mut next_dist = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d = (p - base).norm_squared();
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            if min_dist[i] > next_dist {
                next_dist = min_dist[i];
                next = i;
            }
        }
        current = next;
        selected.push(current);
    }
    Ok(selected)
}

/// Ranks points by distance from the centroid, descending. Used to pick
/// deterministic per-scale FPS start points.
pub(crate) fn centroid_distance_ranks(cloud: &PointCloud) -> Vec<usize> {
    let centroid = match cloud.centroid() {
        Some(c) => c,
        None => return Vec::new(),
    };
    let mut idx: Vec<usize> = (0..cloud.len()).collect();
    idx.sort_unstable_by(|&a, &b| {
        let da = (cloud.points()[a] - centroid).norm_squared();
        let db = (cloud.points()[b] - centroid).norm_squared();
        db.partial_cmp(&da).expect("finite").then(a.cmp(&b))
    });
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64, scale: f64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.gen::<f64>() * scale,
                    rng.gen::<f64>() * scale,
                    rng.gen::<f64>() * scale,
                )
            })
            .collect();
        PointCloud::from_points(pts).unwrap()
    }

    #[test]
    fn cloud_rejects_nan_and_bad_intensity() {
        let bad = vec![Vector3::new(0.0, f64::NAN, 0.0)];
        assert!(PointCloud::from_points(bad).is_err());
        let pts = vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)];
        assert!(PointCloud::new(pts, Some(vec![1.0])).is_err());
    }

    #[test]
    fn voxel_single_cell_centroid() {
        // 8 corners of a cube of side 0.9 fit in one voxel of size 2.
        let mut pts = Vec::new();
        for x in [0.0, 0.9] {
            for y in [0.0, 0.9] {
                for z in [0.0, 0.9] {
                    pts.push(Vector3::new(x, y, z));
                }
            }
        }
        let cloud = PointCloud::from_points(pts).unwrap();
        let down = voxel_downsample(&cloud, 2.0).unwrap();
        assert_eq!(down.len(), 1);
        assert_relative_eq!(down.points()[0], Vector3::new(0.45, 0.45, 0.45), epsilon = 1e-12);
    }

    #[test]
    fn voxel_tiny_cells_preserve_points() {
        let cloud = random_cloud(200, 7, 10.0);
        // Any v below the minimum pairwise distance keeps every point.
        let mut min_dist = f64::INFINITY;
        for (i, p) in cloud.points().iter().enumerate() {
            for q in &cloud.points()[i + 1..] {
                min_dist = min_dist.min((p - q).norm());
            }
        }
        let down = voxel_downsample(&cloud, min_dist / 2.0).unwrap();
        assert_eq!(down.len(), cloud.len());
        let mut a: Vec<_> = cloud.points().to_vec();
        let mut b: Vec<_> = down.points().to_vec();
        let key = |p: &Vector3<f64>| (p.x, p.y, p.z);
        a.sort_by(|p, q| key(p).partial_cmp(&key(q)).unwrap());
        b.sort_by(|p, q| key(p).partial_cmp(&key(q)).unwrap());
        for (p, q) in a.iter().zip(&b) {
            assert_relative_eq!(p, q, epsilon = 1e-12);
        }
    }

    /// Independent oracle: hash map of floor(coord/v) keys, counting occupied
    /// voxels and recomputing centroids.
    fn brute_voxel_counts(cloud: &PointCloud, v: f64) -> usize {
        let mut set = std::collections::HashSet::new();
        for p in cloud.points() {
            set.insert((
                (p.x / v).floor() as i64,
                (p.y / v).floor() as i64,
                (p.z / v).floor() as i64,
            ));
        }
        set.len()
    }

    #[test]
    fn voxel_count_matches_hash_grid_oracle() {
        let cloud = random_cloud(10_000, 42, 1.0);
        let down = voxel_downsample(&cloud, 0.1).unwrap();
        assert_eq!(down.len(), brute_voxel_counts(&cloud, 0.1));
    }

    #[test]
    fn voxel_order_invariance_is_bit_exact() {
        let cloud = random_cloud(500, 3, 2.0);
        let mut shuffled: Vec<_> = cloud.points().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        shuffled.shuffle(&mut rng);
        let cloud2 = PointCloud::from_points(shuffled).unwrap();
        let a = voxel_downsample(&cloud, 0.25).unwrap();
        let b = voxel_downsample(&cloud2, 0.25).unwrap();
        assert_eq!(a.points(), b.points());
    }

    #[test]
    fn voxel_error_paths() {
        let cloud = random_cloud(4, 0, 1.0);
        assert!(matches!(voxel_downsample(&cloud, 0.0), Err(Error::InvalidParameter(_))));
        let empty = PointCloud::from_points(vec![]).unwrap();
        assert!(matches!(voxel_downsample(&empty, 1.0), Err(Error::EmptyInput(_))));
        let far = PointCloud::from_points(vec![Vector3::new(1e12, 0.0, 0.0)]).unwrap();
        assert!(matches!(voxel_downsample(&far, 0.001), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn pca_planar_cloud_has_near_zero_sphericity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = (0..10_000)
            .map(|_| Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), 0.0))
            .collect();
        let cloud = PointCloud::from_points(pts).unwrap();
        let frame = pca(&cloud).unwrap();
        assert!(frame.sphericity() < 0.01);
        // Frame z-axis is the plane normal.
        assert!(frame.v3().z.abs() > 1.0 - 1e-9);
    }

    #[test]
    fn pca_unit_cube_is_isotropic() {
        let cloud = random_cloud(10_000, 11, 1.0);
        let frame = pca(&cloud).unwrap();
        let s = frame.sphericity();
        assert!((0.9..=1.0).contains(&s), "sphericity {s}");
    }

    #[test]
    fn pca_spectral_reconstruction() {
        let cloud = random_cloud(300, 21, 3.0);
        let frame = pca(&cloud).unwrap();
        let mean = cloud.centroid().unwrap();
        let mut cov = Matrix3::zeros();
        for p in cloud.points() {
            let d = p - mean;
            cov += d * d.transpose();
        }
        cov /= cloud.len() as f64;
        let mut recon = Matrix3::zeros();
        for a in 0..3 {
            let v = frame.eigenvectors[a];
            recon += frame.eigenvalues[a] * v * v.transpose();
        }
        assert!((recon - cov).norm() <= 1e-9 * cov.norm());
    }

    #[test]
    fn pca_is_rotation_equivariant_on_eigenvalues() {
        let cloud = random_cloud(400, 33, 2.0);
        let frame = pca(&cloud).unwrap();
        let rot = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let rotated = PointCloud::from_points(cloud.points().iter().map(|p| rot * p).collect()).unwrap();
        let frame_r = pca(&rotated).unwrap();
        for a in 0..3 {
            assert_relative_eq!(frame.eigenvalues[a], frame_r.eigenvalues[a], epsilon = 1e-9);
            // Eigenvectors rotate with the cloud up to the sign convention.
            let dot = (rot * frame.eigenvectors[a]).dot(&frame_r.eigenvectors[a]);
            assert!(dot.abs() > 1.0 - 1e-6, "axis {a} dot {dot}");
        }
    }

    #[test]
    fn pca_frame_is_orthonormal_right_handed() {
        let cloud = random_cloud(50, 77, 1.0);
        let frame = pca(&cloud).unwrap();
        let [v1, v2, v3] = frame.eigenvectors;
        for v in [v1, v2, v3] {
            assert_relative_eq!(v.norm(), 1.0, epsilon = 1e-9);
        }
        assert!(v1.dot(&v2).abs() < 1e-6);
        assert!(v1.dot(&v3).abs() < 1e-6);
        assert!(v2.dot(&v3).abs() < 1e-6);
        let det = Matrix3::from_columns(&[v1, v2, v3]).determinant();
        assert_relative_eq!(det, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn pca_identical_points_is_degenerate() {
        let pts = vec![Vector3::new(1.0, 2.0, 3.0); 5];
        let cloud = PointCloud::from_points(pts).unwrap();
        assert!(matches!(pca(&cloud), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn fps_collinear_picks_diameter() {
        let pts = (0..=10).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let cloud = PointCloud::from_points(pts).unwrap();
        let sel = fps_from_start(&cloud, 2, 0).unwrap();
        assert_eq!(sel, vec![0, 10]);
    }

    #[test]
    fn fps_exhaustion_covers_all_indices() {
        let cloud = random_cloud(37, 1, 1.0);
        let sel = farthest_point_sampling(&cloud, 37).unwrap();
        let mut sorted = sel.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..37).collect::<Vec<_>>());
        let more = farthest_point_sampling(&cloud, 100).unwrap();
        assert_eq!(more.len(), 37);
    }

    #[test]
    fn fps_each_step_is_brute_force_maximin() {
        let cloud = random_cloud(500, 13, 5.0);
        let sel = farthest_point_sampling(&cloud, 50).unwrap();
        for step in 1..sel.len() {
            let chosen = &cloud.points()[sel[step]];
            let prior = &sel[..step];
            let min_d = |p: &Vector3<f64>| {
                prior
                    .iter()
                    .map(|&j| (p - cloud.points()[j]).norm())
                    .fold(f64::INFINITY, f64::min)
            };
            let chosen_d = min_d(chosen);
            let best = cloud.points().iter().map(min_d).fold(f64::NEG_INFINITY, f64::max);
            assert!(chosen_d >= best - 1e-12, "step {step}: {chosen_d} < {best}");
        }
    }

    #[test]
    fn fps_empty_cloud_errors() {
        let empty = PointCloud::from_points(vec![]).unwrap();
        assert!(matches!(farthest_point_sampling(&empty, 3), Err(Error::EmptyInput(_))));
    }
}
