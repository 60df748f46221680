//! Geometric bootstrapping: adaptive voxel size from cloud sphericity and
//! per-scale search radii from neighborhood density, derived from the input
//! pair alone.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{pca, PointCloud};
use crate::error::{Error, Result};
use crate::spatial::SpatialIndex;

/// Bootstrap parameters. Defaults follow the standard parameter set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Voxel-size coefficient when sphericity is high.
    pub kappa_spheric: f64,
    /// Voxel-size coefficient when sphericity is low (disc-like clouds).
    pub kappa_disc: f64,
    /// Sphericity threshold separating the two branches.
    pub tau_v: f64,
    /// Desired neighbor fractions for the local, middle, global radii.
    pub tau_scales: [f64; 3],
    /// Fraction of points sampled for the voxel-size PCA.
    pub delta_v: f64,
    /// Number of points sampled for radius estimation.
    pub n_r: usize,
    /// Maximum truncation radius in meters.
    pub r_max: f64,
    /// When true, applies the clamp as `max(r, r_max)` instead of
    /// `min(r, r_max)`. Kept for comparison only; the min form matches the
    /// stated purpose of a maximum truncation radius.
    pub literal_max_clamp: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            kappa_spheric: 0.10,
            kappa_disc: 0.15,
            tau_v: 0.05,
            tau_scales: [0.005, 0.02, 0.05],
            delta_v: 0.10,
            n_r: 2_000,
            r_max: 5.0,
            literal_max_clamp: false,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        let [tl, tm, tg] = self.tau_scales;
        if !(tl > 0.0 && tl <= tm && tm <= tg && tg < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "tau scales must satisfy 0 < tau_l <= tau_m <= tau_g < 1, got {:?}",
                self.tau_scales
            )));
        }
        if !(self.kappa_spheric > 0.0 && self.kappa_spheric < self.kappa_disc) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < kappa_spheric < kappa_disc, got {} vs {}",
                self.kappa_spheric, self.kappa_disc
            )));
        }
        if !(self.delta_v > 0.0 && self.delta_v <= 1.0) {
            return Err(Error::InvalidParameter(format!("delta_v {} not in (0, 1]", self.delta_v)));
        }
        if self.n_r < 2 {
            return Err(Error::InvalidParameter(format!("n_r {} must be >= 2", self.n_r)));
        }
        if !(self.r_max > 0.0) {
            return Err(Error::InvalidParameter(format!("r_max {} must be positive", self.r_max)));
        }
        if !(self.tau_v > 0.0) {
            return Err(Error::InvalidParameter(format!("tau_v {} must be positive", self.tau_v)));
        }
        Ok(())
    }
}

/// Which voxel-size branch was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Spheric,
    Disc,
}

/// Adaptively chosen voxel size and per-scale radii plus diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub voxel_size: f64,
    /// (r_l, r_m, r_g); non-decreasing and clamped to `r_max`.
    pub radii: [f64; 3],
    /// λ3/λ1 of the sampled covariance.
    pub sphericity: f64,
    /// Spread along the smallest-eigenvalue axis of the samples.
    pub spread: f64,
    pub branch: Branch,
}

/// Picks the cloud with greater cardinality; ties go to `p`.
pub fn select_larger<'a>(p: &'a PointCloud, q: &'a PointCloud) -> Result<&'a PointCloud> {
    if p.is_empty() && q.is_empty() {
        return Err(Error::EmptyInput("both clouds empty".into()));
    }
    if p.len() >= q.len() {
        Ok(p)
    } else {
        Ok(q)
    }
}

/// Seeded sample of `delta` fraction of the cloud (at least `min_n`), without
/// replacement, in ascending index order.
fn sample_fraction(cloud: &PointCloud, delta: f64, min_n: usize, seed: u64) -> Vec<usize> {
    let n = cloud.len();
    let want = ((n as f64 * delta).ceil() as usize).clamp(min_n.min(n), n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, want).into_vec();
    idx.sort_unstable();
    idx
}

/// Voxel size from sampled-cloud sphericity: κ√s with κ chosen by the
/// sphericity branch, s the spread along the smallest principal axis.
pub fn compute_voxel_size(
    cloud: &PointCloud,
    cfg: &BootstrapConfig,
    rng_seed: u64,
) -> Result<(f64, f64, f64, Branch)> {
    cfg.validate()?;
    if cloud.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "voxel-size estimation needs >= 3 points, got {}",
            cloud.len()
        )));
    }
    let idx = sample_fraction(cloud, cfg.delta_v, 3, rng_seed);
    let sampled =
        PointCloud::from_points_unchecked(idx.iter().map(|&i| cloud.points()[i]).collect());

    let frame = pca(&sampled)?;
    let sphericity = frame.sphericity();

    let v3 = frame.v3();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in sampled.points() {
        let proj = p.dot(&v3);
        lo = lo.min(proj);
        hi = hi.max(proj);
    }
    let spread = hi - lo;
    if spread <= 0.0 {
        return Err(Error::DegenerateGeometry(
            "sampled points have zero spread along v3".into(),
        ));
    }

    let branch = if sphericity >= cfg.tau_v {
        Branch::Spheric
    } else {
        Branch::Disc
    };
    let kappa = match branch {
        Branch::Spheric => cfg.kappa_spheric,
        Branch::Disc => cfg.kappa_disc,
    };
    Ok((kappa * spread.sqrt(), sphericity, spread, branch))
}

/// Per-scale radii: for each sampled point the distance at which its
/// self-inclusive neighbor fraction within the sample reaches τ_ξ is its
/// k-th order-statistic distance with k = ⌈τ_ξ·|P_r|⌉; the scale radius is the
/// mean over sampled points, clamped to `r_max`.
pub fn estimate_radii(cloud: &PointCloud, cfg: &BootstrapConfig, rng_seed: u64) -> Result<[f64; 3]> {
    cfg.validate()?;
    if cloud.len() < 2 {
        return Err(Error::DegenerateGeometry(format!(
            "radius estimation needs >= 2 points, got {}",
            cloud.len()
        )));
    }
    let idx = sample_fraction(cloud, cfg.n_r as f64 / cloud.len() as f64, cfg.n_r, rng_seed);
    let sampled =
        PointCloud::from_points_unchecked(idx.iter().map(|&i| cloud.points()[i]).collect());
    let n = sampled.len();
    let index = SpatialIndex::build(&sampled);

    let ks: Vec<usize> = cfg
        .tau_scales
        .iter()
        .map(|tau| ((tau * n as f64).ceil() as usize).clamp(1, n))
        .collect();
    let k_max = *ks.iter().max().unwrap();

    let mut sums = [0.0f64; 3];
    for q in sampled.points() {
        let nearest = index.k_nearest(q, k_max);
        for (s, &k) in ks.iter().enumerate() {
            // k-th smallest distance including the query itself (d_1 = 0).
            sums[s] += nearest[k - 1].1;
        }
    }

    let mut radii = [0.0f64; 3];
    for s in 0..3 {
        let r = sums[s] / n as f64;
        radii[s] = if cfg.literal_max_clamp {
            r.max(cfg.r_max)
        } else {
            r.min(cfg.r_max)
        };
    }
    Ok(radii)
}

/// Runs the full bootstrap for a cloud pair: voxel size from the larger raw
/// cloud, radii from the larger voxelized cloud.
pub fn bootstrap_pair(
    p: &PointCloud,
    q: &PointCloud,
    cfg: &BootstrapConfig,
    rng_seed: u64,
) -> Result<(BootstrapResult, PointCloud, PointCloud)> {
    use crate::cloud::voxel_downsample;
    use crate::seed::derive_seed;

    let larger = select_larger(p, q)?;
    let (voxel_size, sphericity, spread, branch) =
        compute_voxel_size(larger, cfg, derive_seed(rng_seed, "bootstrap.voxel", 0))?;

    let p_down = voxel_downsample(p, voxel_size)?;
    let q_down = voxel_downsample(q, voxel_size)?;

    let larger_down = select_larger(&p_down, &q_down)?;
    let radii = estimate_radii(larger_down, cfg, derive_seed(rng_seed, "bootstrap.radii", 0))?;

    Ok((
        BootstrapResult {
            voxel_size,
            radii,
            sphericity,
            spread,
            branch,
        },
        p_down,
        q_down,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn unit_sphere_shell(n: usize, radius: f64, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| {
                loop {
                    let v = Vector3::new(
                        rng.gen::<f64>() * 2.0 - 1.0,
                        rng.gen::<f64>() * 2.0 - 1.0,
                        rng.gen::<f64>() * 2.0 - 1.0,
                    );
                    let norm = v.norm();
                    if norm > 1e-6 && norm <= 1.0 {
                        break v / norm * radius;
                    }
                }
            })
            .collect();
        PointCloud::from_points(pts).unwrap()
    }

    fn disc_cloud(n: usize, radius: f64, thickness: f64, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| {
                let ang = rng.gen::<f64>() * std::f64::consts::TAU;
                let r = radius * rng.gen::<f64>().sqrt();
                Vector3::new(r * ang.cos(), r * ang.sin(), rng.gen::<f64>() * thickness)
            })
            .collect();
        PointCloud::from_points(pts).unwrap()
    }

    #[test]
    fn select_larger_rules() {
        let a = unit_sphere_shell(100, 1.0, 1);
        let b = unit_sphere_shell(50, 1.0, 2);
        assert_eq!(select_larger(&a, &b).unwrap().len(), 100);
        let c = unit_sphere_shell(100, 2.0, 3);
        // Tie goes to the first argument.
        assert!(std::ptr::eq(select_larger(&a, &c).unwrap(), &a));
        let empty = PointCloud::from_points(vec![]).unwrap();
        assert_eq!(select_larger(&empty, &b).unwrap().len(), 50);
        assert!(select_larger(&empty, &empty).is_err());
    }

    #[test]
    fn voxel_size_sphere_shell_takes_spheric_branch() {
        // Shell of radius 2: spread along v3 is ~4, sphericity ~1.
        let cloud = unit_sphere_shell(20_000, 2.0, 7);
        let cfg = BootstrapConfig::default();
        let (v, sphericity, s, branch) = compute_voxel_size(&cloud, &cfg, 3).unwrap();
        assert_eq!(branch, Branch::Spheric);
        assert!(sphericity >= cfg.tau_v, "sphericity {sphericity}");
        assert_relative_eq!(s, 4.0, epsilon = 0.05);
        // Exact evaluation of the rule on the sampled diagnostics.
        assert_relative_eq!(v, cfg.kappa_spheric * s.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(v, 0.20, epsilon = 0.01);
    }

    #[test]
    fn voxel_size_disc_takes_disc_branch() {
        // Thin disc of radius 40 and thickness 4: sphericity ~0.003.
        let cloud = disc_cloud(20_000, 40.0, 4.0, 11);
        let cfg = BootstrapConfig::default();
        let (v, sphericity, s, branch) = compute_voxel_size(&cloud, &cfg, 3).unwrap();
        assert_eq!(branch, Branch::Disc);
        assert!(sphericity < cfg.tau_v, "sphericity {sphericity}");
        assert_relative_eq!(s, 4.0, epsilon = 0.05);
        assert_relative_eq!(v, cfg.kappa_disc * s.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(v, 0.30, epsilon = 0.01);
    }

    #[test]
    fn voxel_size_scales_as_sqrt_k() {
        let cloud = disc_cloud(5_000, 10.0, 2.0, 5);
        let cfg = BootstrapConfig::default();
        let (v, sph, s, branch) = compute_voxel_size(&cloud, &cfg, 9).unwrap();
        for k in [0.1, 10.0] {
            let scaled = PointCloud::from_points(
                cloud.points().iter().map(|p| p * k).collect(),
            )
            .unwrap();
            let (vk, sphk, sk, branchk) = compute_voxel_size(&scaled, &cfg, 9).unwrap();
            assert_eq!(branch, branchk);
            assert_relative_eq!(sphk, sph, max_relative = 1e-9);
            assert_relative_eq!(sk, s * k, max_relative = 1e-9);
            assert_relative_eq!(vk, v * k.sqrt(), max_relative = 1e-9);
        }
    }

    #[test]
    fn voxel_size_degenerate_inputs() {
        let cfg = BootstrapConfig::default();
        let two = PointCloud::from_points(vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)]).unwrap();
        assert!(compute_voxel_size(&two, &cfg, 0).is_err());
        let same = PointCloud::from_points(vec![Vector3::new(1.0, 1.0, 1.0); 10]).unwrap();
        assert!(matches!(
            compute_voxel_size(&same, &cfg, 0),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    /// Self-inclusive mean neighbor fraction over the sampled set.
    fn avg_fraction(points: &[Vector3<f64>], r: f64) -> f64 {
        let n = points.len();
        let mut total = 0usize;
        for q in points {
            total += points.iter().filter(|p| (*p - q).norm() <= r).count();
        }
        total as f64 / (n * n) as f64
    }

    #[test]
    fn radii_are_ordered_and_near_argmin_of_avg_fraction() {
        let cloud = disc_cloud(400, 5.0, 1.0, 21);
        let mut cfg = BootstrapConfig::default();
        cfg.n_r = 400;
        let radii = estimate_radii(&cloud, &cfg, 2).unwrap();
        assert!(radii[0] <= radii[1] && radii[1] <= radii[2]);
        assert!(radii[2] <= cfg.r_max);

        let pts = cloud.points();
        let n = pts.len() as f64;
        // Candidate grid: all per-point order-statistic distances.
        let mut grid: Vec<f64> = Vec::new();
        for q in pts {
            let mut d: Vec<f64> = pts.iter().map(|p| (p - q).norm()).collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            grid.extend_from_slice(&d);
        }
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();

        for (s, tau) in cfg.tau_scales.iter().enumerate() {
            // avgFraction is non-decreasing in r.
            let mut prev = -1.0;
            for r in grid.iter().step_by(997) {
                let f = avg_fraction(pts, *r);
                assert!(f >= prev);
                prev = f;
            }
            let obj = (avg_fraction(pts, radii[s]) - tau).abs();
            let best = grid
                .iter()
                .map(|r| (avg_fraction(pts, *r) - tau).abs())
                .fold(f64::INFINITY, f64::min);
            // The order-statistic mean matches the exhaustive argmin to within
            // one per-point order statistic of fraction mass.
            assert!(
                obj <= best + 1.0 / n,
                "scale {s}: objective {obj} vs best {best}"
            );
        }
    }

    #[test]
    fn radii_clamp_to_r_max_when_sparse() {
        let cloud = disc_cloud(50, 500.0, 10.0, 3);
        let mut cfg = BootstrapConfig::default();
        cfg.n_r = 50;
        let radii = estimate_radii(&cloud, &cfg, 0).unwrap();
        assert_eq!(radii[2], cfg.r_max);
        // The literal max reading turns the clamp into a floor instead.
        cfg.literal_max_clamp = true;
        cfg.r_max = 1e6;
        let literal = estimate_radii(&cloud, &cfg, 0).unwrap();
        assert_eq!(literal[0], 1e6);
    }

    #[test]
    fn radii_scale_equivariance_on_fixed_sample() {
        // Small cloud so the x10 case stays clear of the r_max clamp.
        let cloud = disc_cloud(600, 1.0, 0.3, 8);
        let mut cfg = BootstrapConfig::default();
        cfg.n_r = 600;
        let base = estimate_radii(&cloud, &cfg, 4).unwrap();
        for k in [0.1, 10.0] {
            let scaled =
                PointCloud::from_points(cloud.points().iter().map(|p| p * k).collect()).unwrap();
            let r = estimate_radii(&scaled, &cfg, 4).unwrap();
            for s in 0..3 {
                assert_relative_eq!(r[s], base[s] * k, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn radii_monotone_in_tau() {
        let cloud = disc_cloud(500, 5.0, 2.0, 10);
        let mut cfg = BootstrapConfig::default();
        cfg.n_r = 300;
        cfg.tau_scales = [0.01, 0.03, 0.2];
        let r = estimate_radii(&cloud, &cfg, 6).unwrap();
        assert!(r[0] <= r[1] && r[1] <= r[2]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = BootstrapConfig::default();
        cfg.tau_scales = [0.05, 0.02, 0.005];
        assert!(cfg.validate().is_err());
        let mut cfg = BootstrapConfig::default();
        cfg.kappa_spheric = 0.2;
        assert!(cfg.validate().is_err());
        let mut cfg = BootstrapConfig::default();
        cfg.delta_v = 0.0;
        assert!(cfg.validate().is_err());
        assert!(BootstrapConfig::default().validate().is_ok());
    }
}
