//! Final pose estimation: correspondence RANSAC with SVD model fitting, robust
//! kernels (Huber, Geman-McClure, truncated least squares) with IRLS/GNC
//! refinement, and the L-shape overlap-ambiguity cost table.

use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rigid transform: rotation in SO(3) plus translation in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Robust kernel family. `c_bar` shapes GM/TLS, `mu` is their non-convexity
/// control parameter, `delta` is the Huber truncation threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RobustKernel {
    Squared,
    Huber { delta: f64 },
    GemanMcclure { c_bar: f64, mu: f64 },
    Tls { c_bar: f64, mu: f64 },
}

impl RobustKernel {
    pub fn huber_default() -> Self {
        RobustKernel::Huber { delta: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            RobustKernel::Squared => true,
            RobustKernel::Huber { delta } => delta > 0.0,
            RobustKernel::GemanMcclure { c_bar, mu } | RobustKernel::Tls { c_bar, mu } => {
                c_bar > 0.0 && mu > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid kernel parameters: {self:?}")))
        }
    }
}

/// Exact kernel cost at residual `r`.
pub fn kernel_eval(kernel: &RobustKernel, r: f64) -> f64 {
    match *kernel {
        RobustKernel::Squared => r * r,
        RobustKernel::Huber { delta } => {
            if r.abs() <= delta {
                0.5 * r * r
            } else {
                delta * (r.abs() - 0.5 * delta)
            }
        }
        RobustKernel::GemanMcclure { c_bar, mu } => {
            let mc2 = mu * c_bar * c_bar;
            mc2 * r * r / (mc2 + r * r)
        }
        RobustKernel::Tls { c_bar, mu } => {
            let r2 = r * r;
            let c2 = c_bar * c_bar;
            if r2 <= mu / (mu + 1.0) * c2 {
                r2
            } else if r2 <= (mu + 1.0) / mu * c2 {
                2.0 * c_bar * r.abs() * (mu * (mu + 1.0)).sqrt() - mu * (c2 + r2)
            } else {
                c2
            }
        }
    }
}

/// IRLS weight w(r) = ρ'(r)/(2r), so the weighted squared cost majorizes ρ.
///
/// Derivations from the closed-form costs:
/// - squared: ρ' = 2r, w = 1.
/// - Huber: ρ' = r for |r| ≤ δ, δ·sign(r) beyond, so w = min(1, δ/|r|).
/// - GM: ρ' = 2r(μc̄²)²/(μc̄²+r²)², so w = (μc̄²/(μc̄²+r²))².
/// - TLS (middle branch): ρ' = 2c̄·sign(r)·√(μ(μ+1)) − 2μr, so
///   w = c̄√(μ(μ+1))/|r| − μ, which is 1 and 0 at the branch edges.
pub fn kernel_weight(kernel: &RobustKernel, r: f64) -> f64 {
    match *kernel {
        RobustKernel::Squared => 1.0,
        RobustKernel::Huber { delta } => {
            if r.abs() <= delta {
                1.0
            } else {
                delta / r.abs()
            }
        }
        RobustKernel::GemanMcclure { c_bar, mu } => {
            let mc2 = mu * c_bar * c_bar;
            let w = mc2 / (mc2 + r * r);
            w * w
        }
        RobustKernel::Tls { c_bar, mu } => {
            let r2 = r * r;
            let c2 = c_bar * c_bar;
            if r2 <= mu / (mu + 1.0) * c2 {
                1.0
            } else if r2 <= (mu + 1.0) / mu * c2 {
                (c_bar * (mu * (mu + 1.0)).sqrt() / r.abs() - mu).clamp(0.0, 1.0)
            } else {
                0.0
            }
        }
    }
}

/// Weighted least-squares rigid transform via cross-covariance SVD with
/// reflection correction; minimizes Σ w‖R·p + t − q‖².
pub fn kabsch(pairs: &[(Vector3<f64>, Vector3<f64>)], weights: Option<&[f64]>) -> Result<Pose> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "kabsch needs >= 3 pairs, got {}",
            pairs.len()
        )));
    }
    if let Some(w) = weights {
        if w.len() != pairs.len() {
            return Err(Error::InvalidParameter("weights length mismatch".into()));
        }
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);

    let mut w_sum = 0.0;
    let mut p_bar = Vector3::zeros();
    let mut q_bar = Vector3::zeros();
    for (i, (p, q)) in pairs.iter().enumerate() {
        let w = weight(i);
        w_sum += w;
        p_bar += w * p;
        q_bar += w * q;
    }
    if w_sum <= 1e-12 {
        return Err(Error::RefinementStalled);
    }
    p_bar /= w_sum;
    q_bar /= w_sum;

    // A = Σ w (p−p̄)(q−q̄)ᵀ; optimal R maximizes tr(R·A).
    let mut a = Matrix3::zeros();
    for (i, (p, q)) in pairs.iter().enumerate() {
        a += weight(i) * (p - p_bar) * (q - q_bar).transpose();
    }

    let svd = a.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::DegenerateModel("svd failed".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::DegenerateModel("svd failed".into()))?;
    let sigma = svd.singular_values;
    if sigma[1] <= 1e-12 * sigma[0].max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateModel(
            "correspondences are collinear or coincident".into(),
        ));
    }

    let v = v_t.transpose();
    let det = (v * u.transpose()).determinant();
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum()));
    let rotation = v * d * u.transpose();
    let translation = q_bar - rotation * p_bar;
    Ok(Pose { rotation, translation })
}

/// RANSAC output.
#[derive(Debug, Clone)]
pub struct RansacResult {
    pub pose: Pose,
    pub inliers: Vec<usize>,
    pub iterations: usize,
    /// True when no hypothesis reached a meaningful inlier set and the result
    /// is the best effort over random triples.
    pub low_confidence: bool,
}

fn triangle_area(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

fn count_inliers(pairs: &[(Vector3<f64>, Vector3<f64>)], pose: &Pose, epsilon: f64) -> Vec<usize> {
    pairs
        .iter()
        .enumerate()
        .filter(|(_, (p, q))| (pose.apply(p) - q).norm() < epsilon)
        .map(|(i, _)| i)
        .collect()
}

/// Classic 3-point hypothesize-and-verify with a final refit on the best
/// inlier set. Stops early once (1 − ratio³)^k < 0.01.
pub fn ransac(
    pairs: &[(Vector3<f64>, Vector3<f64>)],
    epsilon: f64,
    max_iters: usize,
    rng_seed: u64,
) -> Result<RansacResult> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "ransac needs >= 3 pairs, got {}",
            pairs.len()
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon {epsilon} must be positive")));
    }
    let n = pairs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let mut best_inliers: Vec<usize> = Vec::new();
    let mut best_pose: Option<Pose> = None;
    let mut iterations = 0usize;

    for it in 0..max_iters {
        iterations = it + 1;
        let picks = sample(&mut rng, n, 3).into_vec();
        let (p0, q0) = pairs[picks[0]];
        let (p1, q1) = pairs[picks[1]];
        let (p2, q2) = pairs[picks[2]];
        if triangle_area(&p0, &p1, &p2) < 1e-9 {
            continue;
        }
        let model = match kabsch(&[(p0, q0), (p1, q1), (p2, q2)], None) {
            Ok(m) => m,
            Err(_) => continue,
        };
        let inliers = count_inliers(pairs, &model, epsilon);
        if best_pose.is_none() || inliers.len() > best_inliers.len() {
            best_inliers = inliers;
            best_pose = Some(model);
            let ratio = best_inliers.len() as f64 / n as f64;
            let p_miss = (1.0 - ratio.powi(3)).powi(iterations as i32);
            if p_miss < 0.01 {
                break;
            }
        }
    }

    let hypothesis = best_pose.ok_or_else(|| {
        Error::InsufficientData("ransac found no non-degenerate hypothesis".into())
    })?;

    // Refit on the best inlier set, then re-collect inliers under the refit
    // pose so every reported inlier satisfies the bound.
    let (pose, inliers) = if best_inliers.len() >= 3 {
        let subset: Vec<_> = best_inliers.iter().map(|&i| pairs[i]).collect();
        match kabsch(&subset, None) {
            Ok(refit) => {
                let re_inliers = count_inliers(pairs, &refit, epsilon);
                if re_inliers.len() >= 3 {
                    (refit, re_inliers)
                } else {
                    (hypothesis, best_inliers)
                }
            }
            Err(_) => (hypothesis, best_inliers),
        }
    } else {
        (hypothesis, best_inliers)
    };

    let low_confidence = (inliers.len() as f64) < 0.05 * n as f64 || inliers.len() < 3;
    Ok(RansacResult {
        pose,
        inliers,
        iterations,
        low_confidence,
    })
}

/// IRLS refinement output.
#[derive(Debug, Clone)]
pub struct IrlsResult {
    pub pose: Pose,
    /// Robust cost under the target kernel at the final pose.
    pub final_cost: f64,
    /// Set when the weights collapsed and the last valid pose was returned.
    pub stalled: bool,
}

fn residuals(pairs: &[(Vector3<f64>, Vector3<f64>)], pose: &Pose) -> Vec<f64> {
    pairs.iter().map(|(p, q)| (pose.apply(p) - q).norm()).collect()
}

fn total_cost(kernel: &RobustKernel, rs: &[f64]) -> f64 {
    rs.iter().map(|r| kernel_eval(kernel, *r)).sum()
}

fn with_mu(kernel: &RobustKernel, mu: f64) -> RobustKernel {
    match *kernel {
        RobustKernel::GemanMcclure { c_bar, .. } => RobustKernel::GemanMcclure { c_bar, mu },
        RobustKernel::Tls { c_bar, .. } => RobustKernel::Tls { c_bar, mu },
        k => k,
    }
}

/// Iteratively reweighted least squares under `kernel`, with a graduated
/// non-convexity schedule over μ for GM and TLS: GM starts at a large μ
/// (near-quadratic surrogate) and halves toward the kernel's μ; TLS starts
/// near 0 (maximally convex surrogate) and grows by 1.4×. `iters` bounds the
/// inner sweeps per μ stage. The robust cost is non-increasing across IRLS
/// iterations at fixed μ.
pub fn irls_refine(
    pairs: &[(Vector3<f64>, Vector3<f64>)],
    initial: &Pose,
    kernel: &RobustKernel,
    iters: usize,
) -> Result<IrlsResult> {
    kernel.validate()?;
    if pairs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "irls needs >= 3 pairs, got {}",
            pairs.len()
        )));
    }

    let r_max0 = residuals(pairs, initial)
        .into_iter()
        .fold(0.0f64, f64::max)
        .max(1e-12);

    // μ schedule, ending exactly at the kernel's target μ.
    let stages: Vec<f64> = match *kernel {
        RobustKernel::GemanMcclure { c_bar, mu } => {
            let mut s = Vec::new();
            let mut m = (2.0 * r_max0 * r_max0 / (c_bar * c_bar)).max(mu);
            while m > mu {
                s.push(m);
                m /= 2.0;
            }
            s.push(mu);
            s
        }
        RobustKernel::Tls { c_bar, mu } => {
            let c2 = c_bar * c_bar;
            let denom = 2.0 * r_max0 * r_max0 - c2;
            let start = if denom > 0.0 { (c2 / denom).min(mu) } else { mu };
            let mut s = Vec::new();
            let mut m = start.max(1e-9);
            while m < mu {
                s.push(m);
                m *= 1.4;
            }
            s.push(mu);
            s
        }
        _ => vec![f64::NAN], // unused for fixed kernels
    };

    let mut pose = initial.clone();
    let mut stalled = false;

    'outer: for stage_mu in stages {
        let stage_kernel = if stage_mu.is_nan() {
            *kernel
        } else {
            with_mu(kernel, stage_mu)
        };
        let mut prev_cost = total_cost(&stage_kernel, &residuals(pairs, &pose));
        for _ in 0..iters.max(1) {
            let rs = residuals(pairs, &pose);
            let weights: Vec<f64> = rs.iter().map(|r| kernel_weight(&stage_kernel, *r)).collect();
            if weights.iter().all(|w| *w < 1e-12) {
                stalled = true;
                break 'outer;
            }
            let next = match kabsch(pairs, Some(&weights)) {
                Ok(p) => p,
                Err(Error::RefinementStalled) => {
                    stalled = true;
                    break 'outer;
                }
                Err(e) => return Err(e),
            };
            let cost = total_cost(&stage_kernel, &residuals(pairs, &next));
            // Majorize-minimize: the robust cost cannot increase at fixed μ.
            debug_assert!(
                cost <= prev_cost + 1e-9 * (1.0 + prev_cost),
                "IRLS cost increased at fixed mu: {prev_cost} -> {cost}"
            );
            if cost > prev_cost {
                break; // numerical floor reached
            }
            pose = next;
            if prev_cost - cost <= 1e-14 * (1.0 + prev_cost) {
                prev_cost = cost;
                break;
            }
            prev_cost = cost;
        }
    }

    let final_cost = total_cost(kernel, &residuals(pairs, &pose));
    Ok(IrlsResult {
        pose,
        final_cost,
        stalled,
    })
}

/// One row of the L-shape ambiguity cost table.
#[derive(Debug, Clone, Serialize)]
pub struct LshapeRecord {
    pub kernel: String,
    pub mu: f64,
    pub c_bar: f64,
    pub alignment: String,
    pub cost: f64,
}

fn l_shape(spacing: f64, long_len: f64, short_len: f64) -> Vec<Vector3<f64>> {
    let mut pts = Vec::new();
    let long_n = (long_len / spacing).round() as usize;
    let short_n = (short_len / spacing).round() as usize;
    for i in 0..=long_n {
        pts.push(Vector3::new(i as f64 * spacing, 0.0, 0.0));
    }
    for j in 1..=short_n {
        pts.push(Vector3::new(0.0, j as f64 * spacing, 0.0));
    }
    pts
}

fn nearest_residuals(from: &[Vector3<f64>], to: &[Vector3<f64>], shift: Vector3<f64>) -> Vec<f64> {
    from.iter()
        .map(|p| {
            let moved = p + shift;
            to.iter()
                .map(|t| (moved - t).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Cost table for the three ways two L-shaped clouds can be superposed
/// (overlap along the long arm, along the short arm, or fully), evaluated for
/// GM and TLS over sweeps of μ and c̄. The fully-overlapped case has zero
/// residuals, hence zero cost for every kernel setting; the partially
/// overlapped cases keep a positive cost no matter the non-convexity, which
/// is exactly the overlap ambiguity this table documents.
pub fn lshape_ambiguity_demo() -> Vec<LshapeRecord> {
    lshape_ambiguity_table(&[0.1, 1.0, 10.0, 100.0], &[0.1, 1.0])
}

pub fn lshape_ambiguity_table(mus: &[f64], c_bars: &[f64]) -> Vec<LshapeRecord> {
    let spacing = 0.5;
    let base = l_shape(spacing, 12.0, 6.0);
    // Shifts are multiples of the spacing, so overlapped segments coincide
    // exactly and the full case is a perfect superposition.
    let alignments = [
        ("full", Vector3::zeros()),
        ("long", Vector3::new(6.0, 0.0, 0.0)),
        ("short", Vector3::new(0.0, 3.0, 0.0)),
    ];

    let mut records = Vec::new();
    for &(name, shift) in &alignments {
        let rs = nearest_residuals(&base, &base, shift);
        for &mu in mus {
            for &c_bar in c_bars {
                for (kname, kernel) in [
                    ("gm", RobustKernel::GemanMcclure { c_bar, mu }),
                    ("tls", RobustKernel::Tls { c_bar, mu }),
                ] {
                    records.push(LshapeRecord {
                        kernel: kname.to_string(),
                        mu,
                        c_bar,
                        alignment: name.to_string(),
                        cost: total_cost(&kernel, &rs),
                    });
                }
            }
        }
    }
    records
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
        Rotation3::from_euler_angles(
            rng.gen::<f64>() * 6.0 - 3.0,
            rng.gen::<f64>() * 3.0 - 1.5,
            rng.gen::<f64>() * 6.0 - 3.0,
        )
        .into_inner()
    }

    fn random_pairs(
        n: usize,
        rot: &Matrix3<f64>,
        t: &Vector3<f64>,
        noise: f64,
        seed: u64,
    ) -> Vec<(Vector3<f64>, Vector3<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let p = Vector3::new(
                    rng.gen::<f64>() * 4.0 - 2.0,
                    rng.gen::<f64>() * 4.0 - 2.0,
                    rng.gen::<f64>() * 4.0 - 2.0,
                );
                let e = Vector3::new(
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                ) * (2.0 * noise);
                (p, rot * p + t + e)
            })
            .collect()
    }

    #[test]
    fn kabsch_identity_on_equal_pairs() {
        let pairs: Vec<_> = (0..10)
            .map(|i| {
                let p = Vector3::new(i as f64, (i * i) as f64 * 0.1, -(i as f64) * 0.3);
                (p, p)
            })
            .collect();
        let pose = kabsch(&pairs, None).unwrap();
        assert!((pose.rotation - Matrix3::identity()).norm() < 1e-10);
        assert!(pose.translation.norm() < 1e-10);
    }

    #[test]
    fn kabsch_recovers_random_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let rot = random_rotation(&mut rng);
            let t = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            let pairs = random_pairs(10, &rot, &t, 0.0, rng.gen());
            let pose = kabsch(&pairs, None).unwrap();
            assert!((pose.rotation - rot).norm() < 1e-9);
            assert!((pose.translation - t).norm() < 1e-9);
        }
    }

    #[test]
    fn kabsch_beats_coarse_grid_search() {
        // Independent oracle: exhaustive Euler-angle grid with the optimal
        // translation for each rotation.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rot = Rotation3::from_euler_angles(0.5, -0.3, 1.2).into_inner();
        let t = Vector3::new(0.2, -0.7, 0.4);
        let pairs = random_pairs(12, &rot, &t, 0.05, 3);

        let rms = |pose: &Pose| {
            (pairs
                .iter()
                .map(|(p, q)| (pose.apply(p) - q).norm_squared())
                .sum::<f64>()
                / pairs.len() as f64)
                .sqrt()
        };
        let pose = kabsch(&pairs, None).unwrap();

        let steps = 24;
        let mut best_grid = f64::INFINITY;
        for a in 0..steps {
            for b in 0..steps / 2 {
                for c in 0..steps {
                    let r = Rotation3::from_euler_angles(
                        a as f64 / steps as f64 * std::f64::consts::TAU,
                        b as f64 / (steps / 2) as f64 * std::f64::consts::PI,
                        c as f64 / steps as f64 * std::f64::consts::TAU,
                    )
                    .into_inner();
                    let p_bar: Vector3<f64> =
                        pairs.iter().map(|(p, _)| p).sum::<Vector3<f64>>() / pairs.len() as f64;
                    let q_bar: Vector3<f64> =
                        pairs.iter().map(|(_, q)| q).sum::<Vector3<f64>>() / pairs.len() as f64;
                    let cand = Pose {
                        rotation: r,
                        translation: q_bar - r * p_bar,
                    };
                    best_grid = best_grid.min(rms(&cand));
                }
            }
        }
        assert!(rms(&pose) <= best_grid + 1e-12);
        let _ = rng.gen::<f64>();
    }

    #[test]
    fn kabsch_optimality_against_rotation_probe() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let pairs = random_pairs(15, &random_rotation(&mut rng), &Vector3::new(1.0, 2.0, 3.0), 0.1, 9);
        let pose = kabsch(&pairs, None).unwrap();
        let cost = |pose: &Pose| {
            pairs
                .iter()
                .map(|(p, q)| (pose.apply(p) - q).norm_squared())
                .sum::<f64>()
        };
        let base = cost(&pose);
        let p_bar: Vector3<f64> = pairs.iter().map(|(p, _)| p).sum::<Vector3<f64>>() / pairs.len() as f64;
        let q_bar: Vector3<f64> = pairs.iter().map(|(_, q)| q).sum::<Vector3<f64>>() / pairs.len() as f64;
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            let probe = Pose {
                rotation: r,
                translation: q_bar - r * p_bar,
            };
            assert!(cost(&probe) >= base - 1e-9);
        }
    }

    #[test]
    fn kabsch_degenerate_inputs() {
        let collinear: Vec<_> = (0..5)
            .map(|i| {
                let p = Vector3::new(i as f64, 0.0, 0.0);
                (p, p + Vector3::new(0.0, 1.0, 0.0))
            })
            .collect();
        assert!(matches!(
            kabsch(&collinear, None),
            Err(Error::DegenerateModel(_))
        ));
        let two = vec![
            (Vector3::zeros(), Vector3::zeros()),
            (Vector3::new(1.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)),
        ];
        assert!(matches!(kabsch(&two, None), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn ransac_with_outliers_recovers_pose() {
        let mut failures = 0;
        for trial in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
            let rot = random_rotation(&mut rng);
            let t = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            let epsilon = 0.05;
            let mut pairs = random_pairs(90, &rot, &t, 0.1 * epsilon, trial);
            for _ in 0..10 {
                pairs.push((
                    Vector3::new(rng.gen::<f64>() * 4.0, rng.gen::<f64>() * 4.0, rng.gen::<f64>() * 4.0),
                    Vector3::new(rng.gen::<f64>() * 4.0, rng.gen::<f64>() * 4.0, rng.gen::<f64>() * 4.0),
                ));
            }
            let res = ransac(&pairs, epsilon, 50_000, trial).unwrap();
            let t_err = (res.pose.translation - t).norm();
            let r_err = crate::bench::rotation_error(&res.pose.rotation, &rot);
            if t_err > 2.0 * epsilon || r_err > 2.0 {
                failures += 1;
            }
        }
        assert!(failures <= 1, "{failures} failures out of 100");
    }

    #[test]
    fn ransac_outlier_free_keeps_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rot = random_rotation(&mut rng);
        let t = Vector3::new(0.3, 0.1, -0.2);
        let pairs = random_pairs(50, &rot, &t, 0.0, 11);
        let res = ransac(&pairs, 0.01, 50_000, 0).unwrap();
        assert_eq!(res.inliers.len(), 50);
        assert!(res.iterations < 50); // early exit
        assert!((res.pose.rotation - rot).norm() < 1e-9);
    }

    #[test]
    fn ransac_random_pairs_flags_low_confidence() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut total_ratio = 0.0;
        let trials = 20;
        for _ in 0..trials {
            let pairs: Vec<_> = (0..60)
                .map(|_| {
                    (
                        Vector3::new(rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 10.0),
                        Vector3::new(rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 10.0),
                    )
                })
                .collect();
            let res = ransac(&pairs, 0.02, 2_000, rng.gen()).unwrap();
            total_ratio += res.inliers.len() as f64 / pairs.len() as f64;
            for &i in &res.inliers {
                let (p, q) = pairs[i];
                assert!((res.pose.apply(&p) - q).norm() < 0.02);
            }
        }
        // Mutually inconsistent pairs: mean inlier ratio stays near 3/|pairs|.
        assert!(total_ratio / trials as f64 <= 3.0 / 60.0 + 0.05);
    }

    #[test]
    fn kernel_zero_residual_costs_zero() {
        for k in [
            RobustKernel::Squared,
            RobustKernel::huber_default(),
            RobustKernel::GemanMcclure { c_bar: 1.0, mu: 2.0 },
            RobustKernel::Tls { c_bar: 1.0, mu: 2.0 },
        ] {
            assert_eq!(kernel_eval(&k, 0.0), 0.0);
        }
    }

    #[test]
    fn kernel_tls_saturation_branch() {
        let c_bar = 0.7;
        for mu in [0.1, 1.0, 10.0] {
            let k = RobustKernel::Tls { c_bar, mu };
            let r = ((mu + 1.0) / mu).sqrt() * c_bar;
            assert_relative_eq!(kernel_eval(&k, r * 1.0000001), c_bar * c_bar, epsilon = 1e-9);
            assert_relative_eq!(kernel_eval(&k, 100.0), c_bar * c_bar, epsilon = 1e-12);
        }
    }

    #[test]
    fn kernel_branch_continuity() {
        let delta = 1.3;
        let huber = RobustKernel::Huber { delta };
        assert_relative_eq!(kernel_eval(&huber, delta), delta * delta / 2.0, epsilon = 1e-12);
        let below = kernel_eval(&huber, delta - 1e-9);
        let above = kernel_eval(&huber, delta + 1e-9);
        assert!((below - above).abs() < 1e-8);

        let c_bar = 0.9;
        let mu = 3.0;
        let tls = RobustKernel::Tls { c_bar, mu };
        let edge1 = (mu / (mu + 1.0)).sqrt() * c_bar;
        let edge2 = ((mu + 1.0) / mu).sqrt() * c_bar;
        for edge in [edge1, edge2] {
            let below = kernel_eval(&tls, edge - 1e-9);
            let above = kernel_eval(&tls, edge + 1e-9);
            assert!((below - above).abs() < 1e-7, "edge {edge}");
        }
        // Exact values at the boundaries from both closed forms.
        assert_relative_eq!(kernel_eval(&tls, edge1), edge1 * edge1, epsilon = 1e-12);
        assert_relative_eq!(kernel_eval(&tls, edge2), c_bar * c_bar, epsilon = 1e-12);
    }

    #[test]
    fn kernel_gm_limits_to_squared() {
        let k = RobustKernel::GemanMcclure { c_bar: 1.0, mu: 1e6 };
        for r in [0.1, 0.5, 1.0, 2.0] {
            let got = kernel_eval(&k, r);
            assert!((got - r * r).abs() / (r * r) < 1e-3, "r={r}");
        }
    }

    #[test]
    fn irls_outlier_free_matches_kabsch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rot = random_rotation(&mut rng);
        let t = Vector3::new(1.0, -0.5, 0.3);
        let pairs = random_pairs(30, &rot, &t, 0.0, 17);
        let reference = kabsch(&pairs, None).unwrap();
        for k in [
            RobustKernel::Squared,
            RobustKernel::huber_default(),
            RobustKernel::GemanMcclure { c_bar: 0.5, mu: 1.0 },
            RobustKernel::Tls { c_bar: 0.5, mu: 10.0 },
        ] {
            let res = irls_refine(&pairs, &Pose::identity(), &k, 5).unwrap();
            assert!(!res.stalled);
            assert!(
                (res.pose.rotation - reference.rotation).norm() < 1e-8,
                "kernel {k:?}"
            );
            assert!((res.pose.translation - reference.translation).norm() < 1e-8);
        }
    }

    #[test]
    fn irls_tls_gnc_rejects_gross_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rot = random_rotation(&mut rng);
        let t = Vector3::new(0.4, 0.9, -1.1);
        let epsilon = 0.05;
        let mut pairs = random_pairs(70, &rot, &t, 0.2 * epsilon, 23);
        for _ in 0..30 {
            pairs.push((
                Vector3::new(rng.gen::<f64>() * 4.0 - 2.0, rng.gen::<f64>() * 4.0 - 2.0, rng.gen::<f64>() * 4.0 - 2.0),
                Vector3::new(rng.gen::<f64>() * 8.0, rng.gen::<f64>() * 8.0, rng.gen::<f64>() * 8.0),
            ));
        }
        // Plain least squares on the contaminated set misses the bound.
        let lsq = kabsch(&pairs, None).unwrap();
        let lsq_terr = (lsq.translation - t).norm();
        let lsq_rerr = crate::bench::rotation_error(&lsq.rotation, &rot);
        assert!(lsq_terr > 2.0 * epsilon || lsq_rerr > 2.0);

        let kernel = RobustKernel::Tls {
            c_bar: epsilon,
            mu: 1e4,
        };
        let res = irls_refine(&pairs, &lsq, &kernel, 20).unwrap();
        let t_err = (res.pose.translation - t).norm();
        let r_err = crate::bench::rotation_error(&res.pose.rotation, &rot);
        assert!(t_err <= 2.0 * epsilon, "translation error {t_err}");
        assert!(r_err <= 2.0, "rotation error {r_err}");
    }

    #[test]
    fn lshape_full_overlap_is_free_and_minimal() {
        let table = lshape_ambiguity_demo();
        for rec in table.iter().filter(|r| r.alignment == "full") {
            assert_eq!(rec.cost, 0.0, "{rec:?}");
        }
        for rec in &table {
            if rec.alignment != "full" {
                assert!(rec.cost > 0.0, "{rec:?}");
            }
        }
    }

    #[test]
    fn lshape_saturated_tls_counts_misses() {
        // No overlap at all: every point of the shifted copy is far beyond
        // the TLS saturation radius, so the cost is exactly N·c̄².
        let pts = l_shape(0.5, 12.0, 6.0);
        let rs = nearest_residuals(&pts, &pts, Vector3::new(100.0, 0.0, 0.0));
        let c_bar = 1.0;
        let kernel = RobustKernel::Tls { c_bar, mu: 0.1 };
        let sat = ((0.1 + 1.0) / 0.1_f64).sqrt() * c_bar;
        assert!(rs.iter().all(|r| *r > sat));
        let cost = total_cost(&kernel, &rs);
        assert_relative_eq!(cost, pts.len() as f64 * c_bar * c_bar, epsilon = 1e-9);
    }
}
