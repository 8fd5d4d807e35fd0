//! Box-world rooms rendered as Kinect-like point clouds with per-point true
//! labels.
//!
//! The room spans `[0, extents]` on each axis with `z` up. Sensor poses map
//! the optical frame (`x` right, `y` down, `z` forward) into the world; a
//! heading of 0 looks along world `+x`.

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::exec::{self, Exec};
use crate::material_db::SemanticLabel;
use crate::pointcloud::{Point, PointCloudFrame, Pose};
use crate::{Error, Result, Rgb};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneBox {
    pub label: SemanticLabel,
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub color: Rgb,
    /// Probability that a ray hitting this box returns nothing.
    #[serde(default)]
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    /// Room size along x, y, z in meters.
    pub extents: [f64; 3],
    pub wall_color: Rgb,
    pub floor_color: Rgb,
    pub ceiling_color: Rgb,
    pub boxes: Vec<SceneBox>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::office()
    }
}

impl SceneSpec {
    /// A 6.7 × 6.8 × 2.5 m office holding every object label.
    pub fn office() -> Self {
        let b = |label, min, max, color| SceneBox { label, min, max, color, dropout: 0.0 };
        use SemanticLabel::*;
        Self {
            extents: [6.7, 6.8, 2.5],
            wall_color: [205, 200, 185],
            floor_color: [120, 110, 100],
            ceiling_color: [240, 240, 235],
            boxes: vec![
                b(Window, [0.0, 2.0, 0.9], [0.05, 4.5, 2.1], [170, 210, 235]),
                b(Door, [6.65, 0.8, 0.0], [6.7, 1.8, 2.1], [140, 90, 50]),
                b(Furniture, [2.5, 5.6, 0.0], [4.3, 6.4, 0.75], [160, 120, 70]),
                b(Furniture, [0.05, 0.3, 0.0], [0.45, 1.5, 1.9], [180, 140, 90]),
                b(Furniture, [5.8, 5.0, 0.0], [6.6, 6.7, 1.0], [150, 115, 80]),
                b(Electronics, [3.1, 6.0, 0.75], [3.7, 6.1, 1.15], [30, 30, 35]),
                b(Chair, [3.1, 4.9, 0.0], [3.6, 5.4, 0.9], [60, 70, 140]),
            ],
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let spec: Self = load_toml(path.as_ref())?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.extents.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::validation("scene.extents", "must be positive"));
        }
        for (i, b) in self.boxes.iter().enumerate() {
            let field = format!("scene.boxes[{i}]");
            if b.label == SemanticLabel::Unknown {
                return Err(Error::validation(field, "label must be an object label"));
            }
            if (0..3).any(|a| !(b.min[a] >= 0.0 && b.min[a] < b.max[a] && b.max[a] <= self.extents[a])) {
                return Err(Error::validation(field, "box must be non-empty and inside the room"));
            }
            if !(0.0..=1.0).contains(&b.dropout) {
                return Err(Error::validation(field, format!("dropout {} outside [0, 1]", b.dropout)));
            }
        }
        Ok(())
    }

    fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] > 0.0 && p[a] < self.extents[a])
    }

    /// True when `p` is strictly inside the room and outside every box.
    pub fn is_free(&self, p: &Vector3<f64>) -> bool {
        self.contains(p) && !self.boxes.iter().any(|b| (0..3).all(|a| p[a] >= b.min[a] && p[a] <= b.max[a]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSpec {
    pub points_per_frame: usize,
    /// Sensor height above the floor, meters.
    pub height: f64,
    pub hfov_deg: f64,
    pub vfov_deg: f64,
    /// Returns beyond this range are dropped, meters.
    pub max_range: f64,
    /// Range noise stddev, meters.
    pub depth_noise: f64,
    /// Additional range noise stddev per meter of range.
    pub depth_noise_per_meter: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            points_per_frame: 30_000,
            height: 1.08,
            hfov_deg: 57.0,
            vfov_deg: 43.0,
            max_range: 8.0,
            depth_noise: 0.01,
            depth_noise_per_meter: 0.0,
        }
    }
}

impl SensorSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let spec: Self = load_toml(path.as_ref())?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points_per_frame == 0 {
            return Err(Error::validation("sensor.points_per_frame", "must be positive"));
        }
        for (name, v) in [("hfov_deg", self.hfov_deg), ("vfov_deg", self.vfov_deg)] {
            if !(0.0..180.0).contains(&v) {
                return Err(Error::validation(format!("sensor.{name}"), format!("{v} outside [0, 180)")));
            }
        }
        if !(self.max_range > 0.0) {
            return Err(Error::validation("sensor.max_range", "must be positive"));
        }
        if !(self.depth_noise >= 0.0 && self.depth_noise_per_meter >= 0.0) {
            return Err(Error::validation("sensor.depth_noise", "must be non-negative"));
        }
        if !(self.height.is_finite()) {
            return Err(Error::validation("sensor.height", "must be finite"));
        }
        Ok(())
    }

    /// Unit ray directions in the optical frame, row-major over the field of
    /// view. Rays lie on a regular grid in tangent space; when the grid has
    /// more cells than requested points, evenly strided cells are kept. With
    /// both fields of view at zero a single ray is cast.
    pub fn ray_directions(&self) -> Vec<Vector3<f64>> {
        let th = (self.hfov_deg.to_radians() / 2.0).tan();
        let tv = (self.vfov_deg.to_radians() / 2.0).tan();
        let n = self.points_per_frame;
        let (cols, rows) = match (th > 0.0, tv > 0.0) {
            (false, false) => (1, 1),
            (true, false) => (n, 1),
            (false, true) => (1, n),
            (true, true) => {
                let cols = ((n as f64 * th / tv).sqrt().ceil() as usize).max(1);
                (cols, n.div_ceil(cols))
            }
        };
        let total = cols * rows;
        let count = n.min(total);
        let coord = |i: usize, k: usize, t: f64| if k == 1 { 0.0 } else { -t + (i as f64 + 0.5) * 2.0 * t / k as f64 };
        (0..count)
            .map(|s| {
                let g = s * total / count;
                let (c, r) = (g % cols, g / cols);
                Vector3::new(coord(c, cols, th), coord(r, rows, tv), 1.0).normalize()
            })
            .collect()
    }
}

fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// World-from-optical rotation for a level sensor with heading `yaw`.
pub fn sensor_rotation(yaw: f64) -> UnitQuaternion<f64> {
    #[rustfmt::skip]
    let optical = Matrix3::new(
        0.0, 0.0, 1.0,
        -1.0, 0.0, 0.0,
        0.0, -1.0, 0.0,
    );
    let r = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw) * Rotation3::from_matrix_unchecked(optical);
    UnitQuaternion::from_rotation_matrix(&r)
}

pub fn sensor_pose(x: f64, y: f64, yaw_deg: f64, height: f64) -> Pose {
    Pose { translation: Vector3::new(x, y, height), rotation: sensor_rotation(yaw_deg.to_radians()) }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFrame {
    /// Points in the sensor frame, posed.
    pub frame: PointCloudFrame,
    /// True label of each point.
    pub labels: Vec<SemanticLabel>,
}

struct Hit {
    t: f64,
    label: SemanticLabel,
    color: Rgb,
    dropout: f64,
}

fn cast(scene: &SceneSpec, o: &Vector3<f64>, d: &Vector3<f64>) -> Hit {
    // Exit through the room shell.
    let mut best = (f64::INFINITY, 0usize, false);
    for a in 0..3 {
        if d[a] != 0.0 {
            let plane = if d[a] > 0.0 { scene.extents[a] } else { 0.0 };
            let t = (plane - o[a]) / d[a];
            if t < best.0 {
                best = (t, a, d[a] > 0.0);
            }
        }
    }
    let (label, color) = match best {
        (_, 2, false) => (SemanticLabel::Floor, scene.floor_color),
        (_, 2, true) => (SemanticLabel::Ceiling, scene.ceiling_color),
        _ => (SemanticLabel::Wall, scene.wall_color),
    };
    let mut hit = Hit { t: best.0, label, color, dropout: 0.0 };

    for b in &scene.boxes {
        let (mut near, mut far) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut missed = false;
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < b.min[a] || o[a] > b.max[a] {
                    missed = true;
                    break;
                }
                continue;
            }
            let (t1, t2) = ((b.min[a] - o[a]) / d[a], (b.max[a] - o[a]) / d[a]);
            near = near.max(t1.min(t2));
            far = far.min(t1.max(t2));
        }
        if !missed && near <= far && near > 0.0 && near < hit.t {
            hit = Hit { t: near, label: b.label, color: b.color, dropout: b.dropout };
        }
    }
    hit
}

/// Renders one frame. Deterministic for a given `seed`; each ray draws from
/// its own random stream so the result does not depend on `exec`.
pub fn render_frame(
    scene: &SceneSpec,
    sensor: &SensorSpec,
    pose: &Pose,
    timestamp: f64,
    seed: u64,
    exec: Exec,
) -> Result<SyntheticFrame> {
    scene.validate()?;
    sensor.validate()?;
    if !scene.is_free(&pose.translation) {
        return Err(Error::validation(
            "sensor pose",
            format!("position {:?} is not inside the free room space", pose.translation.as_slice()),
        ));
    }
    let origin = pose.translation;
    let dirs = sensor.ray_directions();
    let rays = exec::map_range(exec, dirs.len(), |i| {
        let d_opt = dirs[i];
        let d = pose.rotation * d_opt;
        let hit = cast(scene, &origin, &d);
        if hit.t > sensor.max_range {
            return None;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        if hit.dropout > 0.0 && rng.random::<f64>() < hit.dropout {
            return None;
        }
        let sigma = sensor.depth_noise + sensor.depth_noise_per_meter * hit.t;
        let range = if sigma > 0.0 {
            hit.t + Normal::new(0.0, sigma).expect("finite sigma").sample(&mut rng)
        } else {
            hit.t
        };
        if range <= 0.0 {
            return None;
        }
        let p = d_opt * range;
        Some((Point { position: p, color: hit.color }, hit.label))
    });
    let (points, labels) = rays.into_iter().flatten().unzip();
    Ok(SyntheticFrame { frame: PointCloudFrame { points, pose: *pose, timestamp }, labels })
}

/// Replaces each label, with probability `p`, by a uniformly drawn different
/// object label.
pub fn corrupt_labels(labels: &[SemanticLabel], p: f64, seed: u64) -> Result<Vec<SemanticLabel>> {
    if !(0.0..0.5).contains(&p) {
        return Err(Error::validation("label noise", format!("{p} outside [0, 0.5)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(labels
        .iter()
        .map(|&l| {
            if p == 0.0 || rng.random::<f64>() >= p {
                return l;
            }
            let others: Vec<SemanticLabel> = SemanticLabel::OBJECTS.into_iter().filter(|&o| o != l).collect();
            others[rng.random_range(0..others.len())]
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub yaw_deg: f64,
}

/// Sensor poses along a waypoint path.
///
/// Each segment contributes `frames_per_segment` poses including both ends;
/// segments after the first drop their start pose, which repeats the
/// previous end. Position is interpolated linearly and heading along the
/// shorter arc.
pub fn generate_trajectory(
    scene: &SceneSpec,
    waypoints: &[Waypoint],
    frames_per_segment: usize,
    height: f64,
) -> Result<Vec<Pose>> {
    if waypoints.is_empty() {
        return Err(Error::validation("trajectory", "no waypoints"));
    }
    if frames_per_segment == 0 || (waypoints.len() > 1 && frames_per_segment < 2) {
        return Err(Error::validation("frames_per_segment", "need at least 2 frames per segment"));
    }
    for (i, w) in waypoints.iter().enumerate() {
        if !scene.is_free(&Vector3::new(w.x, w.y, height)) {
            return Err(Error::validation(format!("waypoint {i}"), format!("({}, {}) is outside the free room space", w.x, w.y)));
        }
    }
    if waypoints.len() == 1 {
        let w = waypoints[0];
        return Ok(vec![sensor_pose(w.x, w.y, w.yaw_deg, height); frames_per_segment]);
    }
    let mut poses = Vec::new();
    for (s, pair) in waypoints.windows(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        let dyaw = (b.yaw_deg - a.yaw_deg + 180.0).rem_euclid(360.0) - 180.0;
        for f in usize::from(s > 0)..frames_per_segment {
            let t = f as f64 / (frames_per_segment - 1) as f64;
            poses.push(sensor_pose(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), a.yaw_deg + t * dyaw, height));
        }
    }
    Ok(poses)
}

/// A sensor path: waypoints plus frame timing, loadable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub frames_per_segment: usize,
    /// Seconds between consecutive frames.
    #[serde(default = "default_frame_interval")]
    pub frame_interval: f64,
    #[serde(default)]
    pub seed: u64,
    pub waypoints: Vec<Waypoint>,
}

fn default_frame_interval() -> f64 {
    1.0 / 30.0
}

impl PathSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let spec: Self = load_toml(path.as_ref())?;
        if !(spec.frame_interval > 0.0 && spec.frame_interval.is_finite()) {
            return Err(Error::validation("path.frame_interval", "must be positive"));
        }
        Ok(spec)
    }
}

/// Seed of frame `index` in a run seeded with `seed`.
pub fn frame_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Renders every pose of the path. Frame `i` is stamped `i * frame_interval`.
pub fn simulate(scene: &SceneSpec, sensor: &SensorSpec, path: &PathSpec, exec: Exec) -> Result<Vec<SyntheticFrame>> {
    let poses = generate_trajectory(scene, &path.waypoints, path.frames_per_segment, sensor.height)?;
    poses
        .iter()
        .enumerate()
        .map(|(i, pose)| render_frame(scene, sensor, pose, i as f64 * path.frame_interval, frame_seed(path.seed, i), exec))
        .collect()
}
