//! Synthetic scene and pair generators: a desk-scale stand-in for real indoor
//! fragments (box room with clutter, high sphericity) and outdoor sweeps
//! (concentric ground rings with vertical structures, disc-like).

use nalgebra::{Rotation3, Unit, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::solver::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    IndoorRoom,
    LidarSweep,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "indoor_room" | "indoor" => Ok(SceneKind::IndoorRoom),
            "lidar_sweep" | "lidar" => Ok(SceneKind::LidarSweep),
            other => Err(Error::InvalidParameter(format!("unknown scene kind `{other}`"))),
        }
    }
}

/// Scene generation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthParams {
    /// Characteristic extent: room long side (indoor) or max range (sweep).
    pub extent: f64,
    /// Surface sampling density in points per square meter.
    pub density: f64,
    /// Isotropic Gaussian noise added to both clouds, in meters.
    pub noise_sigma: f64,
    /// Overlap fraction of each cloud, in (0, 1].
    pub overlap: f64,
    /// Maximum rotation angle of the hidden transform, in degrees.
    pub rot_max_deg: f64,
    /// Maximum translation magnitude per axis, in meters.
    pub trans_max: f64,
    /// Number of clutter objects (indoor) or vertical structures (sweep).
    pub clutter: usize,
}

impl SynthParams {
    pub fn indoor_defaults() -> Self {
        Self {
            extent: 6.0,
            density: 160.0,
            noise_sigma: 0.02,
            overlap: 0.6,
            rot_max_deg: 180.0,
            trans_max: 3.0,
            clutter: 9,
        }
    }

    pub fn lidar_defaults() -> Self {
        Self {
            extent: 40.0,
            density: 40.0,
            noise_sigma: 0.05,
            overlap: 0.6,
            rot_max_deg: 180.0,
            trans_max: 8.0,
            clutter: 14,
        }
    }

    pub fn defaults_for(kind: SceneKind) -> Self {
        match kind {
            SceneKind::IndoorRoom => Self::indoor_defaults(),
            SceneKind::LidarSweep => Self::lidar_defaults(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.extent > 0.0)
            || !(self.density > 0.0)
            || !(self.noise_sigma >= 0.0)
            || !(self.overlap > 0.0 && self.overlap <= 1.0)
            || !(self.rot_max_deg >= 0.0 && self.rot_max_deg <= 180.0)
            || !(self.trans_max >= 0.0)
        {
            return Err(Error::InvalidParameter(format!("invalid synth params: {self:?}")));
        }
        Ok(())
    }
}

/// Samples points on the rectangle `origin + s·a + t·b`, s,t ∈ [0,1].
fn sample_rect(
    out: &mut Vec<Vector3<f64>>,
    rng: &mut ChaCha8Rng,
    origin: Vector3<f64>,
    a: Vector3<f64>,
    b: Vector3<f64>,
    density: f64,
) {
    let area = a.cross(&b).norm();
    let n = ((area * density).round() as usize).max(1);
    for _ in 0..n {
        out.push(origin + a * rng.gen::<f64>() + b * rng.gen::<f64>());
    }
}

fn sample_box(
    out: &mut Vec<Vector3<f64>>,
    rng: &mut ChaCha8Rng,
    corner: Vector3<f64>,
    size: Vector3<f64>,
    density: f64,
) {
    let (sx, sy, sz) = (size.x, size.y, size.z);
    let x = Vector3::new(sx, 0.0, 0.0);
    let y = Vector3::new(0.0, sy, 0.0);
    let z = Vector3::new(0.0, 0.0, sz);
    // All six faces.
    sample_rect(out, rng, corner, x, y, density);
    sample_rect(out, rng, corner + z, x, y, density);
    sample_rect(out, rng, corner, x, z, density);
    sample_rect(out, rng, corner + y, x, z, density);
    sample_rect(out, rng, corner, y, z, density);
    sample_rect(out, rng, corner + x, y, z, density);
}

fn indoor_scene(params: &SynthParams, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let lx = params.extent * (0.85 + 0.3 * rng.gen::<f64>());
    let ly = params.extent * (0.65 + 0.3 * rng.gen::<f64>());
    let lz = 2.6 + 0.8 * rng.gen::<f64>();
    let d = params.density;

    let mut pts = Vec::new();
    let x = Vector3::new(lx, 0.0, 0.0);
    let y = Vector3::new(0.0, ly, 0.0);
    let z = Vector3::new(0.0, 0.0, lz);
    let o = Vector3::zeros();
    // Floor, ceiling, four walls.
    sample_rect(&mut pts, rng, o, x, y, d);
    sample_rect(&mut pts, rng, o + z, x, y, d);
    sample_rect(&mut pts, rng, o, x, z, d);
    sample_rect(&mut pts, rng, o + y, x, z, d);
    sample_rect(&mut pts, rng, o, y, z, d);
    sample_rect(&mut pts, rng, o + x, y, z, d);

    // Clutter boxes on the floor: furniture-scale distinctive geometry.
    for _ in 0..params.clutter {
        let size = Vector3::new(
            0.4 + rng.gen::<f64>() * 1.2,
            0.4 + rng.gen::<f64>() * 1.2,
            0.3 + rng.gen::<f64>() * 1.4,
        );
        let corner = Vector3::new(
            rng.gen::<f64>() * (lx - size.x - 0.2) + 0.1,
            rng.gen::<f64>() * (ly - size.y - 0.2) + 0.1,
            0.0,
        );
        sample_box(&mut pts, rng, corner, size, d);
    }
    pts
}

fn lidar_scene(params: &SynthParams, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let max_range = params.extent;
    let sensor_height = 1.8;
    let mut pts = Vec::new();

    // Ground rings: beams at descending elevations from a spinning sensor.
    let beams = 44;
    for b in 0..beams {
        let elev_deg = -25.0 + 22.5 * b as f64 / beams as f64;
        let radius = sensor_height / (-elev_deg.to_radians()).tan();
        if radius > max_range {
            continue;
        }
        let step = (0.008 / radius.max(0.5)).max(0.0006); // ~angular resolution
        let n = (std::f64::consts::TAU / step) as usize;
        let n = n.min(2_200);
        for i in 0..n {
            let ang = i as f64 * std::f64::consts::TAU / n as f64;
            pts.push(Vector3::new(radius * ang.cos(), radius * ang.sin(), 0.0));
        }
    }

    // Vertical structures: wall segments at assorted ranges and headings.
    for _ in 0..params.clutter {
        let range = 5.0 + rng.gen::<f64>() * (max_range * 0.8 - 5.0);
        let heading = rng.gen::<f64>() * std::f64::consts::TAU;
        let center = Vector3::new(range * heading.cos(), range * heading.sin(), 0.0);
        let width = 2.0 + rng.gen::<f64>() * 6.0;
        let height = 2.0 + rng.gen::<f64>() * 4.0;
        let facing = rng.gen::<f64>() * std::f64::consts::TAU;
        let along = Vector3::new(facing.cos(), facing.sin(), 0.0);
        sample_rect(
            &mut pts,
            rng,
            center - along * (width / 2.0),
            along * width,
            Vector3::new(0.0, 0.0, height),
            params.density,
        );
    }
    pts
}

fn random_rotation(rng: &mut ChaCha8Rng, max_angle_rad: f64) -> Rotation3<f64> {
    let axis = loop {
        let v = Vector3::new(
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
        );
        let n = v.norm();
        if n > 1e-6 && n <= 1.0 {
            break Unit::new_normalize(v);
        }
    };
    let angle = rng.gen::<f64>() * max_angle_rad;
    Rotation3::from_axis_angle(&axis, angle)
}

fn add_noise(pts: &mut [Vector3<f64>], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma <= 0.0 {
        return;
    }
    for p in pts.iter_mut() {
        let n: Vector3<f64> = Vector3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        *p += n * sigma;
    }
}

/// Generates a registration pair: the scene is cropped into two overlapping
/// slabs along its x-extent, the second crop is moved by a random seeded
/// SE(3) transform, and both clouds get independent Gaussian noise. The
/// returned pose maps source points into the target frame (q ≈ R·p + t).
pub fn synth_scene(
    kind: SceneKind,
    params: &SynthParams,
    rng_seed: u64,
) -> Result<(PointCloud, PointCloud, Pose)> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let scene = match kind {
        SceneKind::IndoorRoom => indoor_scene(params, &mut rng),
        SceneKind::LidarSweep => lidar_scene(params, &mut rng),
    };

    let (x_lo, x_hi) = scene
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.x), hi.max(p.x))
        });
    let width = x_hi - x_lo;
    // Each crop covers fraction a of the x-extent; the shared band is 2a−1,
    // which equals `overlap` relative to either crop when a = 1/(2−overlap).
    let a = 1.0 / (2.0 - params.overlap);
    let p_cut = x_lo + width * a;
    let q_cut = x_hi - width * a;

    let mut p_pts: Vec<Vector3<f64>> = scene.iter().filter(|p| p.x <= p_cut).copied().collect();
    let q_world: Vec<Vector3<f64>> = scene.iter().filter(|p| p.x >= q_cut).copied().collect();

    let rotation = random_rotation(&mut rng, params.rot_max_deg.to_radians());
    let translation = Vector3::new(
        (rng.gen::<f64>() * 2.0 - 1.0) * params.trans_max,
        (rng.gen::<f64>() * 2.0 - 1.0) * params.trans_max,
        (rng.gen::<f64>() * 2.0 - 1.0) * params.trans_max,
    );
    let mut q_pts: Vec<Vector3<f64>> = q_world.iter().map(|p| rotation * p + translation).collect();

    add_noise(&mut p_pts, params.noise_sigma, &mut rng);
    add_noise(&mut q_pts, params.noise_sigma, &mut rng);

    Ok((
        PointCloud::from_points(p_pts)?,
        PointCloud::from_points(q_pts)?,
        Pose {
            rotation: rotation.into_inner(),
            translation,
        },
    ))
}
