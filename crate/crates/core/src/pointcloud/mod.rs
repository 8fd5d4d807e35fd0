//! Posed RGB point-cloud frames and their file formats.

mod pcd;
mod ply;
mod trajectory;

use std::path::Path;

use log::warn;
use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::{Error, Result, Rgb};

pub use pcd::{read_pcd, write_pcd, PcdEncoding};
pub use ply::{read_ply, write_ply, write_ply_to, PlyCloud, PlyEncoding};
pub use trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    /// Meters; sensor frame unless stated otherwise.
    pub position: Vector3<f64>,
    pub color: Rgb,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64, color: Rgb) -> Self {
        Self { position: Vector3::new(x, y, z), color }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|c| c.is_finite())
    }
}

/// Rigid sensor-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    /// Quaternions further than this from unit norm are rejected; closer ones
    /// are renormalized.
    pub const NORM_TOLERANCE: f64 = 1e-3;

    pub fn identity() -> Self {
        Self { translation: Vector3::zeros(), rotation: UnitQuaternion::identity() }
    }

    /// `q` is `[qx, qy, qz, qw]`.
    pub fn from_parts(translation: [f64; 3], q: [f64; 4]) -> Result<Self> {
        let [qx, qy, qz, qw] = q;
        let quat = Quaternion::new(qw, qx, qy, qz);
        let norm = quat.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > Self::NORM_TOLERANCE {
            return Err(Error::validation("pose quaternion", format!("norm {norm} is not 1")));
        }
        if translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::validation("pose translation", "non-finite component"));
        }
        Ok(Self { translation: Vector3::from(translation), rotation: UnitQuaternion::new_normalize(quat) })
    }

    /// `[qx, qy, qz, qw]`.
    pub fn quaternion_xyzw(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.i, q.j, q.k, q.w]
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudFrame {
    pub points: Vec<Point>,
    pub pose: Pose,
    /// Seconds on a monotonic clock.
    pub timestamp: f64,
}

impl PointCloudFrame {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Each point mapped through the frame pose; the result carries the identity
/// pose.
pub fn to_world(frame: &PointCloudFrame) -> PointCloudFrame {
    let points = frame
        .points
        .iter()
        .map(|p| Point { position: frame.pose.transform(&p.position), color: p.color })
        .collect();
    PointCloudFrame { points, pose: Pose::identity(), timestamp: frame.timestamp }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFormat {
    Ply,
    Pcd,
}

impl FrameFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ply" => Some(FrameFormat::Ply),
            "pcd" => Some(FrameFormat::Pcd),
            _ => None,
        }
    }
}

/// Result of [`parse_frame`]: the frame plus what was filtered out.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedFrame {
    pub frame: PointCloudFrame,
    /// For each kept point, its index in the file.
    pub source_index: Vec<u32>,
    pub dropped_non_finite: usize,
    pub dropped_behind: usize,
}

/// Raw contents of a frame file before pose resolution and filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub positions: Vec<[f64; 3]>,
    pub colors: Option<Vec<Rgb>>,
    pub timestamp: Option<f64>,
    pub pose: Option<Pose>,
}

pub fn read_raw_frame(path: &Path, format: FrameFormat) -> Result<RawFrame> {
    match format {
        FrameFormat::Ply => {
            let cloud = read_ply(path)?;
            let timestamp = ply::comment_timestamp(&cloud.comments, path)?;
            let pose = ply::comment_pose(&cloud.comments, path)?;
            Ok(RawFrame { positions: cloud.positions, colors: cloud.colors, timestamp, pose })
        }
        FrameFormat::Pcd => read_pcd(path),
    }
}

/// Reads a frame file, resolves its pose and drops points unusable for
/// projection.
///
/// The pose comes from `trajectory` when given (exact timestamp match
/// required), otherwise from the file header (`comment pose` for PLY,
/// `VIEWPOINT` for PCD). Points with non-finite coordinates or `z <= 0` are
/// dropped and counted.
pub fn parse_frame(path: &Path, format: FrameFormat, trajectory: Option<&Trajectory>) -> Result<ParsedFrame> {
    let raw = read_raw_frame(path, format)?;
    let colors = raw.colors.ok_or_else(|| Error::format(path, "color required: cloud has no red/green/blue"))?;
    let timestamp = raw.timestamp.ok_or_else(|| Error::format(path, "frame has no timestamp"))?;
    let pose = match trajectory {
        Some(traj) => traj.pose_at(timestamp).ok_or(Error::MissingPose { timestamp })?,
        None => raw.pose.ok_or(Error::MissingPose { timestamp })?,
    };

    let mut points = Vec::with_capacity(raw.positions.len());
    let mut source_index = Vec::with_capacity(raw.positions.len());
    let (mut non_finite, mut behind) = (0, 0);
    for (i, (p, c)) in raw.positions.iter().zip(&colors).enumerate() {
        let point = Point::new(p[0], p[1], p[2], *c);
        if !point.is_finite() {
            non_finite += 1;
        } else if p[2] <= 0.0 {
            behind += 1;
        } else {
            points.push(point);
            source_index.push(i as u32);
        }
    }
    if non_finite + behind > 0 {
        warn!(
            "{}: dropped {non_finite} non-finite and {behind} behind-sensor points",
            path.display()
        );
    }
    Ok(ParsedFrame {
        frame: PointCloudFrame { points, pose, timestamp },
        source_index,
        dropped_non_finite: non_finite,
        dropped_behind: behind,
    })
}

/// Timestamp from the file header only, without decoding points.
pub fn read_frame_timestamp(path: &Path, format: FrameFormat) -> Result<f64> {
    let ts = match format {
        FrameFormat::Ply => ply::comment_timestamp(&ply::read_header_comments(path)?, path)?,
        FrameFormat::Pcd => pcd::read_header_timestamp(path)?,
    };
    ts.ok_or_else(|| Error::format(path, "frame has no timestamp"))
}

/// Writes a frame as PLY with its timestamp and pose in header comments.
pub fn write_frame_ply(frame: &PointCloudFrame, path: &Path, encoding: PlyEncoding) -> Result<()> {
    write_ply(path, &frame.points, &ply::frame_comments(frame), encoding)
}
