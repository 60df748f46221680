//! Evaluation harness: RTE/RRE metrics, per-dataset success criteria,
//! trajectory pair selection, and synthetic scene generation.

pub mod synth;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::Pose;

pub use synth::{synth_scene, SceneKind, SynthParams};

/// Ground-truth relative pose; same invariants as [`Pose`].
pub type GroundTruthPose = Pose;

/// Relative rotation error in degrees:
/// (180/π)·|acos((Tr(R̂ᵀ·R_GT) − 1)/2)|, clamped against numeric overshoot.
pub fn rotation_error(r_hat: &Matrix3<f64>, r_gt: &Matrix3<f64>) -> f64 {
    let trace = (r_hat.transpose() * r_gt).trace();
    let cos = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0);
    cos.acos().abs().to_degrees()
}

/// Relative translation error ‖t_GT − t̂‖, reported in centimeters.
pub fn translation_error(t_hat: &Vector3<f64>, t_gt: &Vector3<f64>) -> f64 {
    (t_gt - t_hat).norm() * 100.0
}

/// Squared-error variant (m²), kept behind an explicit name for comparison
/// with the componentwise-squared reading of the metric.
pub fn translation_error_squared(t_hat: &Vector3<f64>, t_gt: &Vector3<f64>) -> f64 {
    (t_gt - t_hat).norm_squared()
}

/// Success thresholds: translation in meters, rotation in degrees. Both
/// comparisons are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessCriteria {
    pub tau_trans_m: f64,
    pub tau_rot_deg: f64,
}

impl SuccessCriteria {
    pub fn new(tau_trans_m: f64, tau_rot_deg: f64) -> Result<Self> {
        if !(tau_trans_m > 0.0 && tau_rot_deg > 0.0) {
            return Err(Error::InvalidParameter(
                "success thresholds must be positive".into(),
            ));
        }
        Ok(Self {
            tau_trans_m,
            tau_rot_deg,
        })
    }

    /// Named per-dataset presets; unknown names fall back to (2.0 m, 5°).
    pub fn preset(name: &str) -> Self {
        let normalized = name.to_ascii_lowercase().replace(['-', '_'], "");
        let (t, r) = match normalized.as_str() {
            "eth" => (0.3, 2.0),
            "scannetppi" | "scannetppf" | "scannetpp" | "indoor" => (0.3, 15.0),
            // kitti, wod, kaist, mit, oxford, tiers, and anything unknown
            _ => (2.0, 5.0),
        };
        Self {
            tau_trans_m: t,
            tau_rot_deg: r,
        }
    }
}

/// Per-pair evaluation record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    pub rte_cm: f64,
    pub rre_deg: f64,
    pub success: bool,
}

/// Compares an estimated pose against ground truth; success requires RTE ≤
/// τ_trans and RRE ≤ τ_rot (inclusive).
pub fn evaluate_pair(estimate: &Pose, gt: &GroundTruthPose, crit: &SuccessCriteria) -> PairRecord {
    let rte_cm = translation_error(&estimate.translation, &gt.translation);
    let rre_deg = rotation_error(&estimate.rotation, &gt.rotation);
    let success = rte_cm <= crit.tau_trans_m * 100.0 && rre_deg <= crit.tau_rot_deg;
    PairRecord {
        rte_cm,
        rre_deg,
        success,
    }
}

/// Aggregated results; RTE/RRE means are over successful pairs only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub n_pairs: usize,
    pub n_success: usize,
    pub success_rate_pct: f64,
    pub mean_rte_cm: Option<f64>,
    pub mean_rre_deg: Option<f64>,
    pub records: Vec<PairRecord>,
}

impl BenchmarkSummary {
    pub fn from_records(records: Vec<PairRecord>) -> Self {
        let n_pairs = records.len();
        let successes: Vec<&PairRecord> = records.iter().filter(|r| r.success).collect();
        let n_success = successes.len();
        let mean = |f: fn(&PairRecord) -> f64| {
            if n_success == 0 {
                None
            } else {
                Some(successes.iter().map(|r| f(r)).sum::<f64>() / n_success as f64)
            }
        };
        Self {
            n_pairs,
            n_success,
            success_rate_pct: if n_pairs == 0 {
                0.0
            } else {
                100.0 * n_success as f64 / n_pairs as f64
            },
            mean_rte_cm: mean(|r| r.rte_cm),
            mean_rre_deg: mean(|r| r.rre_deg),
            records,
        }
    }
}

/// Greedy pair selection along a trajectory: emit (i, j) where j is the first
/// frame displaced at least `tau_dist` meters from frame i, then continue the
/// walk from j.
pub fn make_pairs_by_distance(poses: &[GroundTruthPose], tau_dist: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if poses.len() < 2 {
        return out;
    }
    let mut i = 0;
    for j in 1..poses.len() {
        if (poses[j].translation - poses[i].translation).norm() >= tau_dist {
            out.push((i, j));
            i = j;
        }
    }
    out
}
