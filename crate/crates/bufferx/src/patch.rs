//! Multi-scale patch embedder: fixed-size scale-normalized patches around FPS
//! keypoints, and cylindrical descriptors (C, F) per keypoint.
//!
//! Patch points are expressed in the frame that aligns the patch's smallest
//! principal axis v3 with +z (the same minimal rotation used later for
//! pairwise transform recovery), then divided by the patch radius so every
//! coordinate lies in [−1, 1].

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{centroid_distance_ranks, fps_from_start, pca, PcaFrame, PointCloud};
use crate::error::{Error, Result};
use crate::matching::align_to_z;
use crate::seed::derive_seed;
use crate::spatial::SpatialIndex;

/// Patch scale level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Local,
    Middle,
    Global,
}

impl Scale {
    pub const ALL: [Scale; 3] = [Scale::Local, Scale::Middle, Scale::Global];

    pub fn index(self) -> usize {
        match self {
            Scale::Local => 0,
            Scale::Middle => 1,
            Scale::Global => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scale::Local => "local",
            Scale::Middle => "middle",
            Scale::Global => "global",
        }
    }

    pub fn from_byte(b: u8) -> Option<Scale> {
        match b {
            0 => Some(Scale::Local),
            1 => Some(Scale::Middle),
            2 => Some(Scale::Global),
            _ => None,
        }
    }
}

/// Cylindrical map dimensions: height bins × azimuth sectors × channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CylDims {
    pub h: usize,
    pub w: usize,
    pub d: usize,
}

impl Default for CylDims {
    fn default() -> Self {
        Self { h: 7, w: 20, d: 32 }
    }
}

impl CylDims {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.w < 2 || self.d < 5 {
            return Err(Error::InvalidParameter(format!(
                "cylindrical dims need h >= 1, w >= 2, d >= 5, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Radial histogram bins: all channels except occupancy and z/ρ stats.
    pub fn radial_bins(&self) -> usize {
        self.d - 4
    }
}

/// Dense H × W × D cylindrical feature map, azimuth axis circular.
#[derive(Debug, Clone, PartialEq)]
pub struct CylMap {
    h: usize,
    w: usize,
    d: usize,
    data: Vec<f32>,
}

impl CylMap {
    pub fn zeros(h: usize, w: usize, d: usize) -> Self {
        Self {
            h,
            w,
            d,
            data: vec![0.0; h * w * d],
        }
    }

    pub fn from_raw(h: usize, w: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w * d {
            return Err(Error::InvalidParameter(format!(
                "cyl data length {} != {}x{}x{}",
                data.len(),
                h,
                w,
                d
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite cyl entry".into()));
        }
        Ok(Self { h, w, d, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.d)
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize, d: usize) -> f32 {
        self.data[(h * self.w + w) * self.d + d]
    }

    #[inline]
    pub fn set(&mut self, h: usize, w: usize, d: usize, value: f32) {
        self.data[(h * self.w + w) * self.d + d] = value;
    }

    /// Channel slice of one (h, w) cell.
    #[inline]
    pub fn cell(&self, h: usize, w: usize) -> &[f32] {
        let base = (h * self.w + w) * self.d;
        &self.data[base..base + self.d]
    }

    pub fn raw(&self) -> &[f32] {
        &self.data
    }
}

/// A scale-normalized neighborhood around one keypoint.
#[derive(Debug, Clone)]
pub struct Patch {
    /// Keypoint position in world coordinates.
    pub center: Vector3<f64>,
    pub scale: Scale,
    /// Search radius r_ξ that produced and normalizes this patch.
    pub radius: f64,
    /// PCA frame of the (subsampled) neighbors.
    pub frame: PcaFrame,
    /// Neighbors as R_align·(p − center)/r with R_align = align_to_z(v3);
    /// every norm is ≤ 1.
    pub points_normalized: Vec<Vector3<f64>>,
}

/// Cylindrical map plus pooled rotation-invariant vector for one keypoint.
#[derive(Debug, Clone)]
pub struct PatchDescriptor {
    pub cyl: CylMap,
    /// L2-normalized D-vector: per-channel mean of `cyl` over all cells.
    pub vec: Vec<f64>,
    /// Index into the scale's FPS keypoint set.
    pub keypoint_index: usize,
}

/// Patch with its descriptor, as produced by the embedder.
#[derive(Debug, Clone)]
pub struct EmbeddedPatch {
    pub patch: Patch,
    pub descriptor: PatchDescriptor,
}

/// All surviving keypoints of one cloud at one scale.
#[derive(Debug, Clone)]
pub struct ScaleEmbedding {
    pub scale: Scale,
    pub radius: f64,
    pub embedded: Vec<EmbeddedPatch>,
    /// Keypoints dropped for having fewer than the minimum neighbors.
    pub dropped_sparse: usize,
}

const MIN_PATCH_NEIGHBORS: usize = 5;

/// Gathers neighbors within `r` of `keypoint`, subsamples to `n_patch` when
/// larger (seeded, keeping ascending index order), and expresses them in the
/// z-aligned patch frame scaled by 1/r.
pub fn extract_patch(
    index: &SpatialIndex,
    keypoint: &Vector3<f64>,
    scale: Scale,
    r: f64,
    n_patch: usize,
    rng_seed: u64,
) -> Result<Patch> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("patch radius {r} must be positive")));
    }
    let neighbors = index.radius_neighbors(keypoint, r);
    if neighbors.len() < MIN_PATCH_NEIGHBORS {
        return Err(Error::SparsePatch {
            got: neighbors.len(),
            need: MIN_PATCH_NEIGHBORS,
        });
    }

    let kept: Vec<usize> = if neighbors.len() > n_patch {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut picks = sample(&mut rng, neighbors.len(), n_patch).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| neighbors[i]).collect()
    } else {
        neighbors
    };

    let points: Vec<Vector3<f64>> = kept.iter().map(|&i| index.point(i)).collect();
    let frame = pca(&PointCloud::from_points_unchecked(points.clone()))?;
    let r_align = align_to_z(&frame.v3());

    let points_normalized = points
        .iter()
        .map(|p| r_align * (p - keypoint) / r)
        .collect();

    Ok(Patch {
        center: *keypoint,
        scale,
        radius: r,
        frame,
        points_normalized,
    })
}

/// Key identifying a descriptor record for external backends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DescriptorKey {
    pub cloud_hash: u64,
    pub keypoint_index: u32,
}

/// Descriptor provider: the built-in handcrafted backend or precomputed
/// per-keypoint arrays loaded from file. Both emit (H × W × D, D) outputs.
pub trait DescriptorBackend: Sync {
    fn dims(&self) -> CylDims;
    fn describe(&self, patch: &Patch, key: DescriptorKey) -> Result<PatchDescriptor>;
}

/// Produces a descriptor for one patch with the given backend.
pub fn describe(
    patch: &Patch,
    backend: &dyn DescriptorBackend,
    key: DescriptorKey,
) -> Result<PatchDescriptor> {
    backend.describe(patch, key)
}

/// Handcrafted SO(2)-equivariant descriptor.
///
/// Points are binned into H uniform height bins over z ∈ [−1, 1] and W
/// azimuth sectors over atan2(y, x) with sector 0 starting at −π. Per cell the
/// channels are: a radial histogram of ρ = √(x²+y²) over D−4 uniform bins in
/// [0, 1] (normalized by the cell count), the occupancy fraction, and the
/// mean z, std of z, and mean ρ of the cell. Bin edges are half-open with the
/// top edge folded into the last bin.
#[derive(Debug, Clone, Default)]
pub struct HandcraftedBackend {
    pub dims: CylDims,
}

impl HandcraftedBackend {
    pub fn new(dims: CylDims) -> Result<Self> {
        dims.validate()?;
        Ok(Self { dims })
    }
}

impl DescriptorBackend for HandcraftedBackend {
    fn dims(&self) -> CylDims {
        self.dims
    }

    fn describe(&self, patch: &Patch, key: DescriptorKey) -> Result<PatchDescriptor> {
        describe_handcrafted(patch, self.dims, key.keypoint_index as usize)
    }
}

fn bin_index(value: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let t = ((value - lo) / (hi - lo) * bins as f64).floor();
    (t as isize).clamp(0, bins as isize - 1) as usize
}

/// Deterministic handcrafted descriptor; a pure function of the patch.
pub fn describe_handcrafted(patch: &Patch, dims: CylDims, keypoint_index: usize) -> Result<PatchDescriptor> {
    dims.validate()?;
    let n = patch.points_normalized.len();
    if n == 0 {
        return Err(Error::SparsePatch { got: 0, need: 1 });
    }
    let (h_n, w_n, d_n) = (dims.h, dims.w, dims.d);
    let radial_bins = dims.radial_bins();

    #[derive(Clone)]
    struct Cell {
        count: u32,
        sum_z: f64,
        sum_z2: f64,
        sum_rho: f64,
        radial: Vec<u32>,
    }
    let empty = Cell {
        count: 0,
        sum_z: 0.0,
        sum_z2: 0.0,
        sum_rho: 0.0,
        radial: vec![0; radial_bins],
    };
    let mut cells = vec![empty; h_n * w_n];

    for p in &patch.points_normalized {
        let rho = (p.x * p.x + p.y * p.y).sqrt();
        let h = bin_index(p.z, -1.0, 1.0, h_n);
        // Azimuth sector 0 starts at −π; +π wraps around to sector 0.
        let az = p.y.atan2(p.x);
        let mut w = ((az + std::f64::consts::PI) / std::f64::consts::TAU * w_n as f64).floor()
            as isize;
        if w >= w_n as isize {
            w -= w_n as isize;
        }
        let w = w.clamp(0, w_n as isize - 1) as usize;
        let r_bin = bin_index(rho, 0.0, 1.0, radial_bins);

        let cell = &mut cells[h * w_n + w];
        cell.count += 1;
        cell.sum_z += p.z;
        cell.sum_z2 += p.z * p.z;
        cell.sum_rho += rho;
        cell.radial[r_bin] += 1;
    }

    let mut cyl = CylMap::zeros(h_n, w_n, d_n);
    for h in 0..h_n {
        for w in 0..w_n {
            let cell = &cells[h * w_n + w];
            if cell.count == 0 {
                continue;
            }
            let count = cell.count as f64;
            for (b, &c) in cell.radial.iter().enumerate() {
                cyl.set(h, w, b, (c as f64 / count) as f32);
            }
            cyl.set(h, w, radial_bins, (count / n as f64) as f32);
            let mean_z = cell.sum_z / count;
            cyl.set(h, w, radial_bins + 1, mean_z as f32);
            let var_z = (cell.sum_z2 / count - mean_z * mean_z).max(0.0);
            cyl.set(h, w, radial_bins + 2, var_z.sqrt() as f32);
            cyl.set(h, w, radial_bins + 3, (cell.sum_rho / count) as f32);
        }
    }

    let vec = pooled_vector(&cyl);
    Ok(PatchDescriptor {
        cyl,
        vec,
        keypoint_index,
    })
}

/// Per-channel mean over all (h, w) cells, L2-normalized.
pub(crate) fn pooled_vector(cyl: &CylMap) -> Vec<f64> {
    let (h_n, w_n, d_n) = cyl.dims();
    let mut vec = vec![0.0f64; d_n];
    for h in 0..h_n {
        for w in 0..w_n {
            let cell = cyl.cell(h, w);
            for d in 0..d_n {
                vec[d] += cell[d] as f64;
            }
        }
    }
    let cells = (h_n * w_n) as f64;
    for v in vec.iter_mut() {
        *v /= cells;
    }
    let norm = vec.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in vec.iter_mut() {
            *v /= norm;
        }
    }
    vec
}

/// External descriptor backend reading precomputed records; see
/// [`crate::io::descriptors`] for the file format.
pub struct ExternalBackend {
    dims: CylDims,
    records: std::collections::HashMap<(u64, u8, u32), (Vec<f32>, Vec<f32>)>,
}

impl ExternalBackend {
    pub fn new(
        dims: CylDims,
        records: std::collections::HashMap<(u64, u8, u32), (Vec<f32>, Vec<f32>)>,
    ) -> Result<Self> {
        dims.validate()?;
        Ok(Self { dims, records })
    }
}

impl DescriptorBackend for ExternalBackend {
    fn dims(&self) -> CylDims {
        self.dims
    }

    fn describe(&self, patch: &Patch, key: DescriptorKey) -> Result<PatchDescriptor> {
        let k = (key.cloud_hash, patch.scale.index() as u8, key.keypoint_index);
        let (cyl_data, vec_data) = self.records.get(&k).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "no external descriptor for cloud {:#x} scale {} keypoint {}",
                key.cloud_hash,
                patch.scale.name(),
                key.keypoint_index
            ))
        })?;
        let cyl = CylMap::from_raw(self.dims.h, self.dims.w, self.dims.d, cyl_data.clone())?;
        let mut vec: Vec<f64> = vec_data.iter().map(|&x| x as f64).collect();
        let norm = vec.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in vec.iter_mut() {
                *v /= norm;
            }
        }
        Ok(PatchDescriptor {
            cyl,
            vec,
            keypoint_index: key.keypoint_index as usize,
        })
    }
}

/// Embeds one cloud at the requested scales: per-scale FPS (with a distinct
/// deterministic start point per scale), patch extraction at each scale's
/// radius, and description. Keypoints whose patches are too sparse are
/// dropped and counted.
pub fn embed_cloud(
    cloud: &PointCloud,
    index: &SpatialIndex,
    scales: &[(Scale, f64)],
    n_fps: usize,
    n_patch: usize,
    backend: &dyn DescriptorBackend,
    rng_seed: u64,
    cloud_hash: u64,
) -> Result<Vec<ScaleEmbedding>> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("embed_cloud on empty cloud".into()));
    }
    let ranks = centroid_distance_ranks(cloud);
    let mut out = Vec::with_capacity(scales.len());

    for &(scale, radius) in scales {
        let start = ranks[scale.index().min(ranks.len() - 1)];
        let keypoints = fps_from_start(cloud, n_fps, start)?;

        let results: Vec<Option<EmbeddedPatch>> = keypoints
            .par_iter()
            .enumerate()
            .map(|(kp_index, &point_index)| {
                let keypoint = cloud.points()[point_index];
                let seed = derive_seed(
                    rng_seed,
                    "patch.subsample",
                    ((scale.index() as u64) << 32) | kp_index as u64,
                );
                let patch = match extract_patch(index, &keypoint, scale, radius, n_patch, seed) {
                    Ok(p) => p,
                    Err(Error::SparsePatch { .. }) => return None,
                    Err(_) => return None,
                };
                let key = DescriptorKey {
                    cloud_hash,
                    keypoint_index: kp_index as u32,
                };
                match backend.describe(&patch, key) {
                    Ok(descriptor) => Some(EmbeddedPatch { patch, descriptor }),
                    Err(_) => None,
                }
            })
            .collect();

        let total = results.len();
        let embedded: Vec<EmbeddedPatch> = results.into_iter().flatten().collect();
        let dropped_sparse = total - embedded.len();
        out.push(ScaleEmbedding {
            scale,
            radius,
            embedded,
            dropped_sparse,
        });
    }
    Ok(out)
}
