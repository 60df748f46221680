//! Intra-scale matching and pairwise transform recovery: mutual nearest
//! neighbors on pooled feature vectors, then one full SE(3) candidate per
//! matched pair from frame alignment plus yaw recovered by circular
//! cross-correlation of the cylindrical maps.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::patch::{CylMap, EmbeddedPatch, Scale};

/// Mutually-matched keypoint index pairs at one scale.
#[derive(Debug, Clone)]
pub struct ScaleMatches {
    pub scale: Scale,
    /// (p keypoint index, q keypoint index); each index appears at most once.
    pub pairs: Vec<(usize, usize)>,
}

impl ScaleMatches {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// One rigid-transform hypothesis generated from a matched patch pair.
#[derive(Debug, Clone)]
pub struct CandidateTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// (scale, p keypoint index, q keypoint index) that produced this.
    pub source_pair: (Scale, usize, usize),
    /// Soft yaw offset in sector units, in (0, W].
    pub yaw_offset: f64,
}

fn nearest_index(query: &[f64], set: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, f) in set.iter().enumerate() {
        let d: f64 = query.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Keeps (i, j) iff j is i's nearest neighbor in `f_q` and i is j's nearest in
/// `f_p` (Euclidean distance, ties to the lowest index).
pub fn mutual_match(scale: Scale, f_p: &[Vec<f64>], f_q: &[Vec<f64>]) -> Result<ScaleMatches> {
    if f_p.is_empty() || f_q.is_empty() {
        return Err(Error::EmptyInput("mutual_match on empty feature list".into()));
    }
    use rayon::prelude::*;
    let p_to_q: Vec<usize> = f_p.par_iter().map(|f| nearest_index(f, f_q)).collect();
    let q_to_p: Vec<usize> = f_q.par_iter().map(|f| nearest_index(f, f_p)).collect();

    let pairs = p_to_q
        .iter()
        .enumerate()
        .filter(|&(i, &j)| q_to_p[j] == i)
        .map(|(i, &j)| (i, j))
        .collect();
    Ok(ScaleMatches { scale, pairs })
}

/// Minimal rotation taking `v3` onto the +z axis (Rodrigues form). For the
/// antipodal case (v3 ≈ −z) the axis is undefined; the documented fallback is
/// a half-turn about x, composed with the well-conditioned minimal rotation
/// of the pre-flipped vector so near-antipodal inputs stay accurate.
pub fn align_to_z(v3: &Vector3<f64>) -> Matrix3<f64> {
    let v = v3.normalize();
    if v.z <= -1.0 + 1e-6 {
        let half_turn_x = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        return rodrigues_to_z(&(half_turn_x * v)) * half_turn_x;
    }
    rodrigues_to_z(&v)
}

/// R = I + [n]x + [n]x^2 / (1 + c) with n = v × z and c = v·z, algebraically
/// equal to I + sinθ[n̂]x + (1−cosθ)[n̂]x²; requires c > −1.
fn rodrigues_to_z(v: &Vector3<f64>) -> Matrix3<f64> {
    let n = Vector3::new(v.y, -v.x, 0.0);
    let nx = Matrix3::new(0.0, -n.z, n.y, n.z, 0.0, -n.x, -n.y, n.x, 0.0);
    Matrix3::identity() + nx + nx * nx / (1.0 + v.z)
}

/// Circular cross-correlation score over azimuth shifts:
/// β_w = Σ_{h,w',d} c_p[h,w',d]·c_q[h,(w'+w) mod W,d] for w = 0..W−1.
pub fn yaw_score(c_p: &CylMap, c_q: &CylMap) -> Result<Vec<f64>> {
    if c_p.dims() != c_q.dims() {
        return Err(Error::InvalidParameter(format!(
            "cylindrical map shape mismatch: {:?} vs {:?}",
            c_p.dims(),
            c_q.dims()
        )));
    }
    let (h_n, w_n, d_n) = c_p.dims();
    let mut beta = vec![0.0f64; w_n];
    for h in 0..h_n {
        for w_src in 0..w_n {
            let a = c_p.cell(h, w_src);
            for (w, b) in beta.iter_mut().enumerate() {
                let cell_q = c_q.cell(h, (w_src + w) % w_n);
                let mut dot = 0.0f64;
                for d in 0..d_n {
                    dot += a[d] as f64 * cell_q[d] as f64;
                }
                *b += dot;
            }
        }
    }
    Ok(beta)
}

/// Soft yaw offset: softmax of β/temperature over indices 1..W, then the
/// probability-weighted index sum. Result lies in [1, W].
pub fn soft_offset(beta: &[f64], temperature: f64) -> Result<f64> {
    let w_n = beta.len();
    if w_n < 2 {
        return Err(Error::InvalidParameter("soft_offset needs W >= 2".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "temperature {temperature} must be positive"
        )));
    }
    let max = beta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = beta.iter().map(|b| ((b - max) / temperature).exp()).collect();
    let z: f64 = exps.iter().sum();
    let d = exps
        .iter()
        .enumerate()
        .map(|(j, e)| e / z * (j + 1) as f64)
        .sum();
    Ok(d)
}

/// Rotation about z by 2πd/W.
pub fn yaw_rotation(d: f64, w: usize) -> Result<Matrix3<f64>> {
    if w < 2 {
        return Err(Error::InvalidParameter("yaw_rotation needs W >= 2".into()));
    }
    let angle = std::f64::consts::TAU * d / w as f64;
    let (s, c) = angle.sin_cos();
    Ok(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
}

/// Softmax-weighted averaging of a circular index is biased near the wrap
/// point, so the score is rotated to put its argmax at index ⌈W/2⌉ before the
/// weighted sum, and the shift undone afterwards. The score is also rescaled
/// to [0, 1] so the temperature acts on a consistent scale regardless of patch
/// size.
fn soft_offset_recentered(beta_indexed: &[f64], temperature: f64) -> Result<f64> {
    let w_n = beta_indexed.len();
    let lo = beta_indexed.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = beta_indexed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let normalized: Vec<f64> = if span > 0.0 {
        beta_indexed.iter().map(|b| (b - lo) / span).collect()
    } else {
        vec![0.0; w_n]
    };

    let argmax = normalized
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite").then(b.0.cmp(&a.0)))
        .map(|(j, _)| j)
        .unwrap_or(0);
    let center = w_n.div_ceil(2) - 1;
    let shift = center as i64 - argmax as i64;

    let rotated: Vec<f64> = (0..w_n)
        .map(|j| normalized[(j as i64 - shift).rem_euclid(w_n as i64) as usize])
        .collect();
    let mut d = soft_offset(&rotated, temperature)? - shift as f64;
    while d <= 0.0 {
        d += w_n as f64;
    }
    while d > w_n as f64 {
        d -= w_n as f64;
    }
    Ok(d)
}

/// Full SE(3) candidate for one matched pair:
/// R = (R^q)ᵀ · R_yaw(d) · R^p and t = q − R·p, with R^p, R^q aligning each
/// patch's v3 to z and d recovered from circular cross-correlation.
pub fn pair_transform(
    p: &EmbeddedPatch,
    q: &EmbeddedPatch,
    temperature: f64,
    source_pair: (Scale, usize, usize),
) -> Result<CandidateTransform> {
    let beta = yaw_score(&p.descriptor.cyl, &q.descriptor.cyl)?;
    let w_n = beta.len();
    // β is indexed by lag 0..W−1; Eq-index w ∈ {1..W} corresponds to lag w,
    // with index W holding lag 0 (a full turn).
    let beta_indexed: Vec<f64> = (0..w_n).map(|j| beta[(j + 1) % w_n]).collect();
    let d = soft_offset_recentered(&beta_indexed, temperature)?;

    let r_p = align_to_z(&p.patch.frame.v3());
    let r_q = align_to_z(&q.patch.frame.v3());
    let rotation = r_q.transpose() * yaw_rotation(d, w_n)? * r_p;
    let translation = q.patch.center - rotation * p.patch.center;

    Ok(CandidateTransform {
        rotation,
        translation,
        source_pair,
        yaw_offset: d,
    })
}
