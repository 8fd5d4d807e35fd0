use std::path::{Path, PathBuf};

use log::{debug, warn};

use crate::material_db::{SemanticLabel, LABEL_COUNT};
use crate::pointcloud::{parse_frame, read_frame_timestamp, write_frame_ply, FrameFormat, PlyEncoding, Trajectory};
use crate::synthetic::SyntheticFrame;
use crate::{Error, PointCloudFrame, Result};

/// Sidecar extension for per-point ground-truth labels (one u8 per point, in
/// file order).
pub const TRUTH_EXT: &str = "gt";
pub const TRAJECTORY_FILE: &str = "trajectory.txt";

/// One frame ready for processing.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    pub name: String,
    pub frame: PointCloudFrame,
    /// True label per point, when known.
    pub truth: Option<Vec<SemanticLabel>>,
    /// Label map image for the external label source.
    pub label_map: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct DirEntry {
    name: String,
    path: PathBuf,
    format: FrameFormat,
    timestamp: f64,
}

/// Frames in timestamp order, either held in memory or read lazily from a
/// directory.
#[derive(Debug, Clone)]
pub enum FrameSource {
    Memory(Vec<FrameInput>),
    Directory { entries: Vec<DirEntry>, trajectory: Option<Trajectory>, label_dir: PathBuf },
}

fn by_time<T>(items: &mut [T], ts: impl Fn(&T) -> f64, name: impl Fn(&T) -> &str) {
    items.sort_by(|a, b| ts(a).total_cmp(&ts(b)).then_with(|| name(a).cmp(name(b))));
}

impl FrameSource {
    pub fn from_frames(mut frames: Vec<FrameInput>) -> Self {
        by_time(&mut frames, |f| f.frame.timestamp, |f| &f.name);
        FrameSource::Memory(frames)
    }

    pub fn from_synthetic(frames: &[SyntheticFrame]) -> Self {
        Self::from_frames(
            frames
                .iter()
                .enumerate()
                .map(|(i, f)| FrameInput {
                    name: frame_name(i),
                    frame: f.frame.clone(),
                    truth: Some(f.labels.clone()),
                    label_map: None,
                })
                .collect(),
        )
    }

    /// Every `.ply` / `.pcd` file in `dir`. Poses come from `trajectory`, or
    /// `dir/trajectory.txt` when present, or else from each file header.
    pub fn open_dir(dir: &Path, trajectory: Option<&Path>, label_dir: Option<&Path>) -> Result<Self> {
        let listing = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::new();
        for item in listing {
            let path = item.map_err(|e| Error::io(dir, e))?.path();
            let Some(format) = FrameFormat::from_path(&path) else { continue };
            let timestamp = read_frame_timestamp(&path, format)?;
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            entries.push(DirEntry { name, path, format, timestamp });
        }
        by_time(&mut entries, |e| e.timestamp, |e| &e.name);
        let default_traj = dir.join(TRAJECTORY_FILE);
        let trajectory = match trajectory {
            Some(p) => Some(Trajectory::load(p)?),
            None if default_traj.is_file() => Some(Trajectory::load(&default_traj)?),
            None => None,
        };
        debug!("{}: {} frames", dir.display(), entries.len());
        Ok(FrameSource::Directory { entries, trajectory, label_dir: label_dir.unwrap_or(dir).to_path_buf() })
    }

    pub fn len(&self) -> usize {
        match self {
            FrameSource::Memory(f) => f.len(),
            FrameSource::Directory { entries, .. } => entries.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn timestamp(&self, index: usize) -> f64 {
        match self {
            FrameSource::Memory(f) => f[index].frame.timestamp,
            FrameSource::Directory { entries, .. } => entries[index].timestamp,
        }
    }

    pub fn get(&self, index: usize) -> Result<FrameInput> {
        match self {
            FrameSource::Memory(f) => Ok(f[index].clone()),
            FrameSource::Directory { entries, trajectory, label_dir } => {
                let e = &entries[index];
                let parsed = parse_frame(&e.path, e.format, trajectory.as_ref())?;
                let truth_path = e.path.with_extension(TRUTH_EXT);
                let truth = if truth_path.is_file() {
                    let raw = std::fs::read(&truth_path).map_err(|err| Error::io(&truth_path, err))?;
                    let labels = parsed
                        .source_index
                        .iter()
                        .map(|&i| {
                            let code = *raw
                                .get(i as usize)
                                .ok_or_else(|| Error::format(&truth_path, format!("no label for point {i}")))?;
                            SemanticLabel::from_code(code).ok_or_else(|| {
                                Error::format(&truth_path, format!("label {code} at point {i} is not below {LABEL_COUNT}"))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Some(labels)
                } else {
                    None
                };
                let label_map = ["png", "pgm"]
                    .iter()
                    .map(|ext| label_dir.join(format!("{}.label.{ext}", e.name)))
                    .find(|p| p.is_file());
                Ok(FrameInput { name: e.name.clone(), frame: parsed.frame, truth, label_map })
            }
        }
    }
}

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:05}")
}

/// Writes frames as binary PLY with ground-truth sidecars plus a trajectory
/// file, in a layout [`FrameSource::open_dir`] reads back.
pub fn write_frames(frames: &[SyntheticFrame], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if frames.is_empty() {
        warn!("no frames to write");
    }
    let mut traj = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let stem = dir.join(frame_name(i));
        write_frame_ply(&f.frame, &stem.with_extension("ply"), PlyEncoding::BinaryLittleEndian)?;
        let gt = stem.with_extension(TRUTH_EXT);
        std::fs::write(&gt, f.labels.iter().map(|l| l.code()).collect::<Vec<u8>>()).map_err(|e| Error::io(&gt, e))?;
        traj.push((f.frame.timestamp, f.frame.pose));
    }
    Trajectory::new(traj).save(dir.join(TRAJECTORY_FILE))
}
