//! Ground-truth pose files: KITTI odometry (12-float 3×4 rows) and TUM
//! (timestamp + translation + quaternion) trajectories.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::bench::GroundTruthPose;
use crate::error::{Error, Result};
use crate::solver::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseFormat {
    KittiOdometry,
    Tum,
}

impl std::str::FromStr for PoseFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "kitti" | "kitti_odometry" => Ok(PoseFormat::KittiOdometry),
            "tum" => Ok(PoseFormat::Tum),
            other => Err(Error::InvalidParameter(format!("unknown pose format `{other}`"))),
        }
    }
}

/// Sniffs the format from the first data line: 12 fields is KITTI, 8 is TUM.
pub fn detect_pose_format(path: &Path) -> Result<PoseFormat> {
    let text = fs::read_to_string(path)?;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        return match line.split_whitespace().count() {
            12 => Ok(PoseFormat::KittiOdometry),
            8 => Ok(PoseFormat::Tum),
            n => Err(Error::parse(path, "line 1", format!("{n} fields match no known pose format"))),
        };
    }
    Err(Error::parse(path, "EOF", "no data lines"))
}

const ORTHONORMARLITY_TOL: f64 = 1e-3;

/// Re-orthonormalizes via SVD when within tolerance; errors beyond it.
fn check_rotation(path: &Path, line_no: usize, r: Matrix3<f64>, warnings: &mut Vec<String>) -> Result<Matrix3<f64>> {
    let dev = (r.transpose() * r - Matrix3::identity()).norm();
    if dev <= 1e-9 {
        return Ok(r);
    }
    if dev > ORTHONORMARLITY_TOL {
        return Err(Error::parse(
            path,
            format!("line {line_no}"),
            format!("rotation deviates from orthonormal by {dev:.2e}"),
        ));
    }
    warnings.push(format!(
        "line {line_no}: rotation deviates by {dev:.2e}; re-orthonormalized"
    ));
    let svd = r.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let det = (u * v_t).determinant();
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum()));
    Ok(u * d * v_t)
}

pub fn load_poses(path: &Path, format: PoseFormat) -> Result<Vec<GroundTruthPose>> {
    let (poses, warnings) = load_poses_with_warnings(path, format)?;
    for w in warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(poses)
}

pub fn load_poses_with_warnings(
    path: &Path,
    format: PoseFormat,
) -> Result<(Vec<GroundTruthPose>, Vec<String>)> {
    let text = fs::read_to_string(path)?;
    let mut poses = Vec::new();
    let mut warnings = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    Error::parse(path, format!("line {}", idx + 1), format!("bad number `{f}`"))
                })
            })
            .collect::<Result<_>>()?;
        match format {
            PoseFormat::KittiOdometry => {
                if fields.len() != 12 {
                    return Err(Error::parse(
                        path,
                        format!("line {}", idx + 1),
                        format!("expected 12 fields, got {}", fields.len()),
                    ));
                }
                let r = Matrix3::new(
                    fields[0], fields[1], fields[2], fields[4], fields[5], fields[6], fields[8],
                    fields[9], fields[10],
                );
                let r = check_rotation(path, idx + 1, r, &mut warnings)?;
                poses.push(Pose {
                    rotation: r,
                    translation: Vector3::new(fields[3], fields[7], fields[11]),
                });
            }
            PoseFormat::Tum => {
                if fields.len() != 8 {
                    return Err(Error::parse(
                        path,
                        format!("line {}", idx + 1),
                        format!("expected 8 fields, got {}", fields.len()),
                    ));
                }
                // timestamp tx ty tz qx qy qz qw
                let q = Quaternion::new(fields[7], fields[4], fields[5], fields[6]);
                if q.norm() < 1e-9 {
                    return Err(Error::parse(path, format!("line {}", idx + 1), "zero quaternion"));
                }
                let unit = UnitQuaternion::from_quaternion(q);
                poses.push(Pose {
                    rotation: unit.to_rotation_matrix().into_inner(),
                    translation: Vector3::new(fields[1], fields[2], fields[3]),
                });
            }
        }
    }
    Ok((poses, warnings))
}

pub fn save_poses(path: &Path, poses: &[GroundTruthPose], format: PoseFormat) -> Result<()> {
    let mut out = String::new();
    for (i, pose) in poses.iter().enumerate() {
        let r = &pose.rotation;
        let t = &pose.translation;
        match format {
            PoseFormat::KittiOdometry => {
                out.push_str(&format!(
                    "{} {} {} {} {} {} {} {} {} {} {} {}\n",
                    r[(0, 0)],
                    r[(0, 1)],
                    r[(0, 2)],
                    t[0],
                    r[(1, 0)],
                    r[(1, 1)],
                    r[(1, 2)],
                    t[1],
                    r[(2, 0)],
                    r[(2, 1)],
                    r[(2, 2)],
                    t[2],
                ));
            }
            PoseFormat::Tum => {
                let q = UnitQuaternion::from_matrix(r);
                out.push_str(&format!(
                    "{} {} {} {} {} {} {} {}\n",
                    i as f64, t[0], t[1], t[2], q.i, q.j, q.k, q.w
                ));
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Relative ground-truth pose mapping source frame `i` into target frame `j`
/// given world poses: R = R_jᵀ·R_i, t = R_jᵀ·(t_i − t_j).
pub fn relative_pose(poses: &[GroundTruthPose], src: usize, tgt: usize) -> Result<GroundTruthPose> {
    let n = poses.len();
    if src >= n || tgt >= n {
        return Err(Error::InvalidParameter(format!(
            "pose indices {src},{tgt} out of range ({n} poses)"
        )));
    }
    let (pi, pj) = (&poses[src], &poses[tgt]);
    Ok(Pose {
        rotation: pj.rotation.transpose() * pi.rotation,
        translation: pj.rotation.transpose() * (pi.translation - pj.translation),
    })
}
