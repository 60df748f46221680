//! Cross-scale consensus maximization: pool candidate transforms and matched
//! pairs from all scales, pick the candidate with the largest inlier set.

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matching::CandidateTransform;
use crate::patch::Scale;

/// Pooled candidates and matched point pairs, index-aligned.
#[derive(Debug, Clone, Default)]
pub struct CandidateSet {
    pub candidates: Vec<CandidateTransform>,
    /// (p point, q point, scale) per candidate.
    pub pairs: Vec<(Vector3<f64>, Vector3<f64>, Scale)>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn push(&mut self, candidate: CandidateTransform, p: Vector3<f64>, q: Vector3<f64>, scale: Scale) {
        self.candidates.push(candidate);
        self.pairs.push((p, q, scale));
    }
}

/// Winning transform with its inlier pair indices.
#[derive(Debug, Clone)]
pub struct ConsensusResult {
    pub best: CandidateTransform,
    /// Index of the winner within the candidate set.
    pub best_index: usize,
    /// Pair indices with ‖R·p + t − q‖ < ε under the winner.
    pub inliers: Vec<usize>,
    pub inlier_count: usize,
    /// Mean residual over the inliers, in meters.
    pub mean_residual: f64,
}

/// Default inlier threshold: twice the voxel size, since centroid
/// voxelization leaves residual noise on the order of v.
pub fn default_epsilon(voxel_size: f64) -> Result<f64> {
    if !(voxel_size > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "voxel size {voxel_size} must be positive"
        )));
    }
    Ok(2.0 * voxel_size)
}

fn score(
    candidate: &CandidateTransform,
    pairs: &[(Vector3<f64>, Vector3<f64>, Scale)],
    epsilon: f64,
) -> (usize, f64) {
    let mut count = 0usize;
    let mut sum = 0.0f64;
    for (p, q, _) in pairs {
        let r = (candidate.rotation * p + candidate.translation - q).norm();
        if r < epsilon {
            count += 1;
            sum += r;
        }
    }
    let mean = if count > 0 { sum / count as f64 } else { f64::INFINITY };
    (count, mean)
}

/// Selects the candidate maximizing inlier cardinality over all pairs. When
/// more than `max_candidates` candidates exist, scores a seeded uniform
/// subsample of candidates (all pairs are always scored). Ties break by lower
/// mean inlier residual, then lower candidate index.
pub fn consensus_maximize(
    set: &CandidateSet,
    epsilon: f64,
    max_candidates: usize,
    rng_seed: u64,
) -> Result<ConsensusResult> {
    if set.is_empty() {
        return Err(Error::EmptyInput("consensus on empty candidate set".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon {epsilon} must be positive")));
    }
    let n = set.len();
    let eval: Vec<usize> = if n > max_candidates {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut idx = sample(&mut rng, n, max_candidates).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };

    let scores: Vec<(usize, f64)> = eval
        .par_iter()
        .map(|&i| score(&set.candidates[i], &set.pairs, epsilon))
        .collect();

    // Arg-max in fixed candidate order for determinism.
    let mut best_at = 0usize;
    for (k, s) in scores.iter().enumerate() {
        let b = &scores[best_at];
        if s.0 > b.0 || (s.0 == b.0 && s.1 < b.1) {
            best_at = k;
        }
    }
    let best_index = eval[best_at];
    let (inlier_count, mean_residual) = scores[best_at];
    if inlier_count < 3 {
        return Err(Error::InsufficientConsensus(inlier_count));
    }

    let best = set.candidates[best_index].clone();
    let inliers: Vec<usize> = set
        .pairs
        .iter()
        .enumerate()
        .filter(|(_, (p, q, _))| (best.rotation * p + best.translation - q).norm() < epsilon)
        .map(|(i, _)| i)
        .collect();
    debug_assert_eq!(inliers.len(), inlier_count);

    Ok(ConsensusResult {
        best,
        best_index,
        inliers,
        inlier_count,
        mean_residual,
    })
}
