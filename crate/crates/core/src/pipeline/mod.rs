//! End-to-end map building: project → fill holes → label → optional CRF →
//! back-project → material lookup → world transform → grid insertion.

mod config;
mod source;
mod timing;

use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::time::Instant;

use log::{info, warn};
use nalgebra::Vector3;
use serde::Serialize;

use crate::material_db::{lookup_material, MatchingTable, MaterialDatabase, MaterialId, SemanticLabel, LABEL_COUNT};
use crate::pointcloud::to_world;
use crate::projection::{backproject_labels, fill_holes, project_frame, ReconstructedImage};
use crate::segmentation::{densecrf_refine, load_label_map, unary_from_labels, LabelField, LabelRemap};
use crate::synthetic::{corrupt_labels, frame_seed};
use crate::voxelmap::{export_map, write_snapshot, ExportMode, InsertStats, MapStats};
use crate::{Error, OccupancyGrid, Point, Result};

pub use config::{HoleFillConfig, LabelConfig, LabelSource, MaterialsConfig, PipelineConfig, RunConfig};
pub use source::{frame_name, write_frames, DirEntry, FrameInput, FrameSource, TRAJECTORY_FILE, TRUTH_EXT};
pub use timing::{Stage, StageSummary, StageTimes, TimingReport};

pub const SNAPSHOT_FILE: &str = "map.snm";
pub const COLOR_EXPORT_FILE: &str = "map_color.ply";
pub const MATERIAL_EXPORT_FILE: &str = "map_material.ply";

/// A frame after every stage but insertion.
#[derive(Debug, Clone)]
pub struct ProcessedFrame {
    pub index: usize,
    pub timestamp: f64,
    /// World-frame points.
    pub points: Vec<Point>,
    /// Estimated label per point.
    pub labels: Vec<SemanticLabel>,
    pub materials: Vec<MaterialId>,
    pub origin: Vector3<f64>,
    pub times: StageTimes,
}

/// Config plus the resources it names, loaded once.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub db: MaterialDatabase,
    pub table: MatchingTable,
    pub remap: Option<LabelRemap>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let (db, table) = config.load_materials()?;
        let remap = config.load_remap()?;
        Ok(Self { config, db, table, remap })
    }

    /// Per-pixel hard labels for the frame's reconstructed image.
    fn hard_labels(&self, index: usize, input: &FrameInput, img: &ReconstructedImage) -> Result<LabelField> {
        let labels = &self.config.labels;
        let truth = || {
            input.truth.as_ref().ok_or_else(|| {
                Error::validation("labels.source", format!("frame '{}' has no ground-truth labels", input.name))
            })
        };
        let per_point: Vec<SemanticLabel> = match labels.source {
            LabelSource::External => {
                let path = input.label_map.as_ref().ok_or_else(|| {
                    Error::validation("labels.source", format!("frame '{}' has no label map", input.name))
                })?;
                return load_label_map(path, (img.width, img.height), self.remap.as_ref());
            }
            LabelSource::Synthetic => truth()?.clone(),
            LabelSource::SyntheticNoise => corrupt_labels(truth()?, labels.noise, frame_seed(labels.seed, index))?,
        };
        if per_point.len() != input.frame.len() {
            return Err(Error::Dimension(format!(
                "{} truth labels for {} points",
                per_point.len(),
                input.frame.len()
            )));
        }
        let ids: Vec<u8> = img
            .point_index
            .iter()
            .map(|pi| pi.map_or(SemanticLabel::Unknown, |i| per_point[i as usize]).code())
            .collect();
        LabelField::from_hard_labels(img.width, img.height, &ids, LABEL_COUNT)
    }

    /// Runs every stage except insertion.
    pub fn process_frame(&self, index: usize, input: &FrameInput) -> Result<ProcessedFrame> {
        let cfg = &self.config;
        let exec = cfg.pipeline.exec;
        let mut times = StageTimes::default();
        let frame = &input.frame;

        let img = times.measure(Stage::Project, || project_frame(frame, &cfg.camera, exec));
        let (img, _) = times.measure(Stage::Fill, || {
            fill_holes(&img, cfg.hole_fill.kernel, cfg.hole_fill.max_iterations, exec)
        })?;
        let hard = times.measure(Stage::Label, || self.hard_labels(index, input, &img))?;
        let field = if cfg.pipeline.crf {
            times.measure(Stage::Crf, || -> Result<LabelField> {
                let unary = unary_from_labels(&hard, cfg.crf.unary_confidence)?;
                let refined = densecrf_refine(&unary, &img.color, &cfg.crf, exec)?;
                let err = refined.max_normalization_error();
                if err > 1e-6 {
                    return Err(Error::Invariant(format!("refined label distribution off by {err}")));
                }
                Ok(refined)
            })?
        } else {
            hard
        };
        let labels = times.measure(Stage::Backproject, || backproject_labels(&img, &field, frame))?;
        let materials = times.measure(Stage::Lookup, || {
            labels.iter().map(|&l| lookup_material(l, &self.table)).collect::<Vec<_>>()
        });
        let points = times.measure(Stage::Transform, || to_world(frame).points);
        Ok(ProcessedFrame {
            index,
            timestamp: frame.timestamp,
            points,
            labels,
            materials,
            origin: frame.pose.translation,
            times,
        })
    }

    pub fn new_grid(&self) -> Result<OccupancyGrid> {
        OccupancyGrid::new(self.config.grid)
    }

    pub fn insert(&self, grid: &mut OccupancyGrid, frame: &mut ProcessedFrame) -> Result<InsertStats> {
        let exec = self.config.pipeline.exec;
        frame.times.measure(Stage::Insert, || grid.insert_labeled_frame(&frame.points, &frame.materials, &frame.origin, exec))
    }

    /// Builds a map from every frame of `source`, in timestamp order.
    pub fn build_map(&self, source: &FrameSource) -> Result<BuildOutput> {
        let mut grid = self.new_grid()?;
        let (mut frames, mut points, mut timings) = (0usize, 0usize, Vec::new());
        let n = source.len();
        if n == 0 {
            warn!("no frames; the map is empty");
        }
        let wrap = |index: usize, e: Error| Error::Frame { index, timestamp: source.timestamp(index), source: Box::new(e) };
        let mut consume = |mut f: ProcessedFrame, grid: &mut OccupancyGrid| -> Result<()> {
            let index = f.index;
            let stats = self.insert(grid, &mut f).map_err(|e| wrap(index, e))?;
            info!(
                "frame {index} t={}: {} points, {} hit / {} miss cells, {:.1} ms",
                f.timestamp,
                stats.points,
                stats.hit_cells,
                stats.miss_cells,
                f.times.total() * 1e3
            );
            frames += 1;
            points += f.points.len();
            timings.push(f.times);
            Ok(())
        };
        let produce = |i: usize| source.get(i).and_then(|input| self.process_frame(i, &input)).map_err(|e| wrap(i, e));

        if self.config.pipeline.pipelined && n > 1 {
            std::thread::scope(|s| -> Result<()> {
                let (tx, rx) = sync_channel::<Result<ProcessedFrame>>(1);
                s.spawn(move || {
                    for i in 0..n {
                        let r = produce(i);
                        let failed = r.is_err();
                        if tx.send(r).is_err() || failed {
                            break;
                        }
                    }
                });
                for r in rx {
                    consume(r?, &mut grid)?;
                }
                Ok(())
            })?;
        } else {
            for i in 0..n {
                consume(produce(i)?, &mut grid)?;
            }
        }

        let observed: u64 = grid.sorted_cells().iter().map(|(_, c)| c.observations()).sum();
        if observed != points as u64 {
            return Err(Error::Invariant(format!("map holds {observed} observations for {points} inserted points")));
        }
        Ok(BuildOutput { grid, frames, points, timings })
    }

    /// Builds the map and writes the snapshot and both PLY exports to `out_dir`.
    pub fn run_build_map(&self, source: &FrameSource, out_dir: &Path) -> Result<BuildSummary> {
        let built = self.build_map(source)?;
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let snapshot = out_dir.join(SNAPSHOT_FILE);
        let color = out_dir.join(COLOR_EXPORT_FILE);
        let material = out_dir.join(MATERIAL_EXPORT_FILE);
        write_snapshot(&built.grid, &snapshot)?;
        export_map(&built.grid, ExportMode::Color, &self.db, &color)?;
        export_map(&built.grid, ExportMode::Material, &self.db, &material)?;
        Ok(BuildSummary {
            frames: built.frames,
            points: built.points,
            crf: self.config.pipeline.crf,
            map: built.grid.map_stats(&self.db),
            timing: TimingReport::from_samples(&built.timings),
            outputs: vec![snapshot, color, material],
        })
    }

    /// Times `samples` frames processed back to back (cycling through the
    /// source) into a fresh grid, without pipelining.
    pub fn bench(&self, source: &FrameSource, samples: usize) -> Result<BenchReport> {
        if source.is_empty() {
            return Err(Error::validation("bench", "no frames to time"));
        }
        let inputs: Vec<FrameInput> = (0..source.len()).map(|i| source.get(i)).collect::<Result<_>>()?;
        let mut grid = self.new_grid()?;
        let mut timings = Vec::with_capacity(samples);
        let mut points = 0;
        for s in 0..samples {
            let i = s % inputs.len();
            let start = Instant::now();
            let mut f = self.process_frame(i, &inputs[i])?;
            self.insert(&mut grid, &mut f)?;
            let mut t = f.times;
            t.wall = start.elapsed().as_secs_f64();
            timings.push(t);
            points += f.points.len();
        }
        Ok(BenchReport {
            samples,
            points_per_frame: points as f64 / samples.max(1) as f64,
            crf: self.config.pipeline.crf,
            map: grid.map_stats(&self.db),
            timing: TimingReport::from_samples(&timings),
        })
    }
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub grid: OccupancyGrid,
    pub frames: usize,
    pub points: usize,
    pub timings: Vec<StageTimes>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BuildSummary {
    pub frames: usize,
    pub points: usize,
    pub crf: bool,
    pub map: MapStats,
    pub timing: TimingReport,
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub samples: usize,
    pub points_per_frame: f64,
    pub crf: bool,
    pub map: MapStats,
    pub timing: TimingReport,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{render_frame, sensor_pose, SceneSpec, SensorSpec};
    use crate::voxelmap::VoxelKey;
    use crate::Exec;

    fn wall_scene() -> Vec<crate::synthetic::SyntheticFrame> {
        let scene = SceneSpec { boxes: Vec::new(), ..SceneSpec::office() };
        let sensor = SensorSpec { points_per_frame: 3000, depth_noise: 0.0, hfov_deg: 20.0, vfov_deg: 15.0, ..Default::default() };
        (0..6)
            .map(|i| render_frame(&scene, &sensor, &sensor_pose(4.7, 3.4, 0.0, 1.08), i as f64, i, Exec::Sequential).unwrap())
            .collect()
    }

    #[test]
    fn wall_frames_map_to_concrete() {
        let frames = wall_scene();
        let p = Pipeline::new(PipelineConfig::default()).unwrap();
        let out = p.build_map(&FrameSource::from_synthetic(&frames)).unwrap();
        let occupied = out.grid.occupied_cells();
        assert!(!occupied.is_empty());
        for (k, _) in &occupied {
            assert_eq!(out.grid.query_material(k), Some(MaterialId(0)), "{k:?}");
        }
    }

    #[test]
    fn single_threaded_matches_pipelined() {
        let frames = wall_scene();
        let src = FrameSource::from_synthetic(&frames);
        let mut cfg = PipelineConfig::default();
        cfg.labels.source = LabelSource::SyntheticNoise;
        let a = Pipeline::new(cfg.clone()).unwrap().build_map(&src).unwrap();
        cfg.pipeline.pipelined = false;
        cfg.pipeline.exec = Exec::Sequential;
        let b = Pipeline::new(cfg).unwrap().build_map(&src).unwrap();
        assert_eq!(a.grid.sorted_cells(), b.grid.sorted_cells());
    }

    #[test]
    fn zero_frames_give_empty_map() {
        let p = Pipeline::new(PipelineConfig::default()).unwrap();
        let out = p.build_map(&FrameSource::from_frames(Vec::new())).unwrap();
        assert!(out.grid.is_empty());
        assert!(out.grid.cell(&VoxelKey::new(0, 0, 0)).is_none());
    }

    #[test]
    fn missing_truth_is_reported_with_frame() {
        let mut frames = wall_scene();
        frames.truncate(2);
        let mut src = FrameSource::from_synthetic(&frames);
        if let FrameSource::Memory(f) = &mut src {
            f[1].truth = None;
        }
        let p = Pipeline::new(PipelineConfig::default()).unwrap();
        match p.build_map(&src) {
            Err(Error::Frame { index: 1, timestamp, .. }) => assert_eq!(timestamp, 1.0),
            other => panic!("{other:?}"),
        }
    }
}
