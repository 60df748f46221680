//! Pipeline orchestration: bootstrap → voxelize → per-scale embed/match →
//! cross-scale consensus → RANSAC, with a structured report.

use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::bench::{evaluate_pair, GroundTruthPose, PairRecord, SuccessCriteria};
use crate::bootstrap::{bootstrap_pair, BootstrapConfig, BootstrapResult};
use crate::cloud::PointCloud;
use crate::consensus::{consensus_maximize, default_epsilon, CandidateSet};
use crate::error::{Error, Result};
use crate::matching::{mutual_match, pair_transform};
use crate::patch::{embed_cloud, CylDims, DescriptorBackend, HandcraftedBackend, Scale};
use crate::seed::derive_seed;
use crate::solver::{irls_refine, ransac, Pose, RobustKernel};
use crate::spatial::SpatialIndex;

/// Optional robust refinement after RANSAC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineMode {
    Off,
    Huber,
    GemanMcclure,
    Tls,
}

/// Full pipeline configuration; defaults reproduce the standard parameter set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub bootstrap: BootstrapConfig,
    /// Keypoints sampled per scale by FPS.
    pub n_fps: usize,
    /// Maximum points per patch.
    pub n_patch: usize,
    /// Cylindrical descriptor dimensions (H, W, D).
    pub dims: CylDims,
    /// Softmax temperature for the soft yaw offset.
    pub temperature: f64,
    /// Inlier threshold override; ε = 2·voxel_size when absent.
    pub epsilon: Option<f64>,
    /// Candidate cap for consensus scoring.
    pub max_candidates: usize,
    pub ransac_max_iters: usize,
    pub rng_seed: u64,
    /// Scales to run; all three by default.
    pub scales: Vec<Scale>,
    pub refine: RefineMode,
    /// Huber δ used when `refine` = huber.
    pub refine_huber_delta: f64,
    /// GNC iterations per μ stage when refinement is on.
    pub refine_iters: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            bootstrap: BootstrapConfig::default(),
            n_fps: 1_500,
            n_patch: 512,
            dims: CylDims::default(),
            temperature: 0.1,
            epsilon: None,
            max_candidates: 5_000,
            ransac_max_iters: 50_000,
            rng_seed: 0,
            scales: Scale::ALL.to_vec(),
            refine: RefineMode::Off,
            refine_huber_delta: 1.0,
            refine_iters: 10,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.bootstrap.validate()?;
        self.dims.validate()?;
        if self.n_fps == 0 || self.n_patch == 0 {
            return Err(Error::InvalidParameter("n_fps and n_patch must be >= 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0) {
                return Err(Error::InvalidParameter(format!("epsilon {eps} must be positive")));
            }
        }
        if self.scales.is_empty() {
            return Err(Error::InvalidParameter("at least one scale required".into()));
        }
        if self.ransac_max_iters == 0 || self.max_candidates == 0 {
            return Err(Error::InvalidParameter(
                "ransac_max_iters and max_candidates must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Terminal status of a registration run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    /// Consensus was too weak; the solver ran on all pooled pairs.
    Degraded,
    DegenerateGeometry,
    ScaleEmpty,
    InsufficientData,
}

impl Status {
    pub fn is_usable(self) -> bool {
        matches!(self, Status::Success | Status::Degraded)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleReport {
    pub scale: Scale,
    pub radius: f64,
    pub keypoints_p: usize,
    pub keypoints_q: usize,
    pub dropped_p: usize,
    pub dropped_q: usize,
    pub matches: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct Timings {
    pub bootstrap_ms: f64,
    pub embed_ms: f64,
    pub matching_ms: f64,
    pub consensus_ms: f64,
    pub solve_ms: f64,
    pub total_ms: f64,
}

/// Pose as a 3×4 row-major [R|t] array for serialization.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PoseRows(pub [[f64; 4]; 3]);

impl From<&Pose> for PoseRows {
    fn from(pose: &Pose) -> Self {
        let r = &pose.rotation;
        let t = &pose.translation;
        PoseRows([
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t[0]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t[1]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t[2]],
        ])
    }
}

impl PoseRows {
    pub fn to_pose(&self) -> Pose {
        let m = &self.0;
        Pose {
            rotation: nalgebra::Matrix3::new(
                m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
            ),
            translation: Vector3::new(m[0][3], m[1][3], m[2][3]),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsensusReport {
    pub candidates: usize,
    pub inlier_count: usize,
    pub mean_residual: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RansacReport {
    pub iterations: usize,
    pub inlier_count: usize,
    pub input_pairs: usize,
    pub low_confidence: bool,
}

/// Versioned registration report; the one CLI/JSON-facing artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub schema: u32,
    pub status: Status,
    pub pose: PoseRows,
    pub bootstrap: Option<BootstrapResult>,
    pub scales: Vec<ScaleReport>,
    pub consensus: Option<ConsensusReport>,
    pub ransac: Option<RansacReport>,
    pub degraded: bool,
    pub warnings: Vec<String>,
    pub timings_ms: Timings,
    /// Filled when ground truth is supplied.
    pub metrics: Option<PairRecord>,
}

impl RegistrationReport {
    fn failure(status: Status, warnings: Vec<String>, timings: Timings) -> Self {
        Self {
            schema: 1,
            status,
            pose: PoseRows::from(&Pose::identity()),
            bootstrap: None,
            scales: Vec::new(),
            consensus: None,
            ransac: None,
            degraded: false,
            warnings,
            timings_ms: timings,
            metrics: None,
        }
    }

    pub fn pose(&self) -> Pose {
        self.pose.to_pose()
    }

    /// Attaches RTE/RRE/success against ground truth.
    pub fn with_ground_truth(mut self, gt: &GroundTruthPose, crit: &SuccessCriteria) -> Self {
        self.metrics = Some(evaluate_pair(&self.pose(), gt, crit));
        self
    }
}

fn ms(from: Instant) -> f64 {
    from.elapsed().as_secs_f64() * 1e3
}

/// Stable content hash of a cloud, used to key external descriptor records.
pub fn cloud_hash(cloud: &PointCloud) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bits: u64| {
        for byte in bits.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    feed(cloud.len() as u64);
    for p in cloud.points() {
        feed(p.x.to_bits());
        feed(p.y.to_bits());
        feed(p.z.to_bits());
    }
    h
}

/// Runs the full registration pipeline with the handcrafted descriptor
/// backend. Deterministic given `cfg.rng_seed`, independent of thread count.
pub fn register(p: &PointCloud, q: &PointCloud, cfg: &PipelineConfig) -> Result<RegistrationReport> {
    let backend = HandcraftedBackend::new(cfg.dims)?;
    register_with_backend(p, q, cfg, &backend)
}

/// As [`register`], with an explicit descriptor backend (e.g. precomputed
/// descriptors loaded from file).
pub fn register_with_backend(
    p: &PointCloud,
    q: &PointCloud,
    cfg: &PipelineConfig,
    backend: &dyn DescriptorBackend,
) -> Result<RegistrationReport> {
    cfg.validate()?;
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyInput("registration needs two non-empty clouds".into()));
    }

    let t_start = Instant::now();
    let mut timings = Timings::default();
    let mut warnings = Vec::new();

    // Step 1: geometric bootstrapping (voxel size, voxelization, radii).
    let stage = Instant::now();
    let (boot, p_down, q_down) = match bootstrap_pair(p, q, &cfg.bootstrap, cfg.rng_seed) {
        Ok(x) => x,
        Err(Error::DegenerateGeometry(msg)) => {
            timings.bootstrap_ms = ms(stage);
            timings.total_ms = ms(t_start);
            return Ok(RegistrationReport::failure(
                Status::DegenerateGeometry,
                vec![msg],
                timings,
            ));
        }
        Err(e) => return Err(e),
    };
    timings.bootstrap_ms = ms(stage);

    // Step 2: multi-scale patch embedding on both voxelized clouds.
    let stage = Instant::now();
    let scales: Vec<(Scale, f64)> = cfg
        .scales
        .iter()
        .map(|s| (*s, boot.radii[s.index()]))
        .collect();
    let index_p = SpatialIndex::build(&p_down);
    let index_q = SpatialIndex::build(&q_down);
    let hash_p = cloud_hash(&p_down);
    let hash_q = cloud_hash(&q_down);
    let emb_p = embed_cloud(
        &p_down,
        &index_p,
        &scales,
        cfg.n_fps,
        cfg.n_patch,
        backend,
        derive_seed(cfg.rng_seed, "embed.p", 0),
        hash_p,
    )?;
    let emb_q = embed_cloud(
        &q_down,
        &index_q,
        &scales,
        cfg.n_fps,
        cfg.n_patch,
        backend,
        derive_seed(cfg.rng_seed, "embed.q", 0),
        hash_q,
    )?;
    timings.embed_ms = ms(stage);

    // Step 3: intra-scale matching and pairwise transform candidates.
    let stage = Instant::now();
    let mut scale_reports = Vec::new();
    let mut set = CandidateSet::default();
    for (se_p, se_q) in emb_p.iter().zip(&emb_q) {
        let scale = se_p.scale;
        let mut report = ScaleReport {
            scale,
            radius: se_p.radius,
            keypoints_p: se_p.embedded.len(),
            keypoints_q: se_q.embedded.len(),
            dropped_p: se_p.dropped_sparse,
            dropped_q: se_q.dropped_sparse,
            matches: 0,
        };
        if se_p.embedded.is_empty() || se_q.embedded.is_empty() {
            warnings.push(format!("scale {} produced no descriptors", scale.name()));
            scale_reports.push(report);
            continue;
        }
        let f_p: Vec<Vec<f64>> = se_p.embedded.iter().map(|e| e.descriptor.vec.clone()).collect();
        let f_q: Vec<Vec<f64>> = se_q.embedded.iter().map(|e| e.descriptor.vec.clone()).collect();
        let matches = mutual_match(scale, &f_p, &f_q)?;
        report.matches = matches.len();
        scale_reports.push(report);

        use rayon::prelude::*;
        let candidates: Vec<_> = matches
            .pairs
            .par_iter()
            .map(|&(i, j)| {
                let ep = &se_p.embedded[i];
                let eq = &se_q.embedded[j];
                pair_transform(ep, eq, cfg.temperature, (scale, i, j))
                    .map(|c| (c, ep.patch.center, eq.patch.center))
            })
            .collect::<Result<Vec<_>>>()?;
        for (c, pc, qc) in candidates {
            set.push(c, pc, qc, scale);
        }
    }
    timings.matching_ms = ms(stage);

    if set.is_empty() {
        timings.total_ms = ms(t_start);
        warnings.push("no candidate transforms at any scale".into());
        let mut report = RegistrationReport::failure(Status::ScaleEmpty, warnings, timings);
        report.bootstrap = Some(boot);
        report.scales = scale_reports;
        return Ok(report);
    }

    // Step 4: cross-scale consensus maximization.
    let stage = Instant::now();
    let epsilon = match cfg.epsilon {
        Some(e) => e,
        None => default_epsilon(boot.voxel_size)?,
    };
    let mut degraded = false;
    let (solver_pairs, consensus_report): (Vec<(Vector3<f64>, Vector3<f64>)>, _) =
        match consensus_maximize(&set, epsilon, cfg.max_candidates, derive_seed(cfg.rng_seed, "consensus", 0)) {
            Ok(res) => {
                let pairs = res
                    .inliers
                    .iter()
                    .map(|&i| (set.pairs[i].0, set.pairs[i].1))
                    .collect();
                let report = ConsensusReport {
                    candidates: set.len(),
                    inlier_count: res.inlier_count,
                    mean_residual: res.mean_residual,
                    epsilon,
                };
                (pairs, report)
            }
            Err(Error::InsufficientConsensus(count)) => {
                // Degraded fallback: hand every pooled pair to the solver.
                degraded = true;
                warnings.push(format!(
                    "consensus found only {count} inliers; falling back to all {} pairs",
                    set.len()
                ));
                let pairs = set.pairs.iter().map(|(p, q, _)| (*p, *q)).collect();
                let report = ConsensusReport {
                    candidates: set.len(),
                    inlier_count: count,
                    mean_residual: f64::NAN,
                    epsilon,
                };
                (pairs, report)
            }
            Err(e) => return Err(e),
        };
    timings.consensus_ms = ms(stage);

    // Step 5: final solve.
    let stage = Instant::now();
    let ransac_seed = derive_seed(cfg.rng_seed, "ransac", 0);
    let solved = match ransac(&solver_pairs, epsilon, cfg.ransac_max_iters, ransac_seed) {
        Ok(r) => r,
        Err(Error::InsufficientData(msg)) => {
            timings.solve_ms = ms(stage);
            timings.total_ms = ms(t_start);
            warnings.push(msg);
            let mut report = RegistrationReport::failure(Status::InsufficientData, warnings, timings);
            report.bootstrap = Some(boot);
            report.scales = scale_reports;
            report.consensus = Some(consensus_report);
            return Ok(report);
        }
        Err(e) => return Err(e),
    };

    let mut pose = solved.pose.clone();
    if cfg.refine != RefineMode::Off && solved.inliers.len() >= 3 {
        let kernel = match cfg.refine {
            RefineMode::Huber => RobustKernel::Huber {
                delta: cfg.refine_huber_delta,
            },
            RefineMode::GemanMcclure => RobustKernel::GemanMcclure { c_bar: epsilon, mu: 1.0 },
            RefineMode::Tls => RobustKernel::Tls { c_bar: epsilon, mu: 1e4 },
            RefineMode::Off => unreachable!(),
        };
        let inlier_pairs: Vec<_> = solved.inliers.iter().map(|&i| solver_pairs[i]).collect();
        match irls_refine(&inlier_pairs, &pose, &kernel, cfg.refine_iters) {
            Ok(res) => {
                if res.stalled {
                    warnings.push("robust refinement stalled; keeping RANSAC pose".into());
                } else {
                    pose = res.pose;
                }
            }
            Err(e) => warnings.push(format!("robust refinement failed: {e}")),
        }
    }
    timings.solve_ms = ms(stage);
    timings.total_ms = ms(t_start);

    if solved.low_confidence {
        warnings.push("ransac inlier ratio is very low".into());
    }

    Ok(RegistrationReport {
        schema: 1,
        status: if degraded { Status::Degraded } else { Status::Success },
        pose: PoseRows::from(&pose),
        bootstrap: Some(boot),
        scales: scale_reports,
        consensus: Some(consensus_report),
        ransac: Some(RansacReport {
            iterations: solved.iterations,
            inlier_count: solved.inliers.len(),
            input_pairs: solver_pairs.len(),
            low_confidence: solved.low_confidence,
        }),
        degraded,
        warnings,
        timings_ms: timings,
        metrics: None,
    })
}
