use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use sonomap::imageio::read_png_rgb;
use sonomap::pipeline::{write_frames, FrameSource, LabelSource, Pipeline, PipelineConfig};
use sonomap::segmentation::{
    densecrf_refine, load_label_map, save_label_map, unary_from_labels, write_prob_tensor,
};
use sonomap::synthetic::{simulate, PathSpec, SceneSpec, SensorSpec};
use sonomap::voxelmap::{export_map, read_snapshot, ExportMode};
use sonomap::{Exec, MaterialDatabase, Result};

/// Acoustic-material voxel mapping from labeled RGB point clouds.
///
/// Exit codes: 0 success, 1 input error, 2 internal invariant violation.
#[derive(Parser, Debug)]
#[command(name = "sonomap", version)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic room along a waypoint path into a frame directory.
    Simulate(SimulateArgs),
    /// Fuse a frame directory into a voxel map; writes a snapshot and PLY exports.
    BuildMap(BuildArgs),
    /// Export a map snapshot as a PLY vertex cloud.
    Export(ExportArgs),
    /// Print map statistics as JSON.
    Stats(StatsArgs),
    /// Time the per-frame stages over repeated frames.
    Bench(BenchArgs),
    /// Refine a label map against its RGB image with the CRF.
    CrfRefine(CrfArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scene TOML; the built-in office when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Sensor TOML; Kinect-like defaults when omitted.
    #[arg(long)]
    sensor: Option<PathBuf>,
    /// Path TOML with waypoints and frame timing.
    #[arg(long)]
    path: PathBuf,
    /// Override the path's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    sequential: bool,
}

/// Overrides for fields of the pipeline config.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Pipeline TOML; built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// labels.source
    #[arg(long, value_enum)]
    label_source: Option<LabelSourceArg>,
    /// labels.directory
    #[arg(long)]
    label_dir: Option<PathBuf>,
    /// labels.noise
    #[arg(long)]
    noise: Option<f64>,
    /// labels.seed
    #[arg(long)]
    seed: Option<u64>,
    /// labels.ade20k
    #[arg(long)]
    ade20k: bool,
    /// pipeline.crf = true
    #[arg(long, conflicts_with = "no_crf")]
    crf: bool,
    /// pipeline.crf = false
    #[arg(long)]
    no_crf: bool,
    /// crf.iterations
    #[arg(long)]
    crf_iterations: Option<u32>,
    /// grid.carve_free_space = false
    #[arg(long)]
    no_carve: bool,
    /// grid.resolution
    #[arg(long)]
    resolution: Option<f64>,
    /// pipeline.pipelined = false and pipeline.exec = "sequential"
    #[arg(long)]
    single_threaded: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LabelSourceArg {
    External,
    Synthetic,
    SyntheticNoise,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Color,
    Material,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = self.label_source {
            cfg.labels.source = match s {
                LabelSourceArg::External => LabelSource::External,
                LabelSourceArg::Synthetic => LabelSource::Synthetic,
                LabelSourceArg::SyntheticNoise => LabelSource::SyntheticNoise,
            };
        }
        if let Some(d) = &self.label_dir {
            cfg.labels.directory = Some(d.clone());
        }
        if let Some(n) = self.noise {
            cfg.labels.noise = n;
        }
        if let Some(s) = self.seed {
            cfg.labels.seed = s;
        }
        cfg.labels.ade20k |= self.ade20k;
        if self.crf {
            cfg.pipeline.crf = true;
        }
        if self.no_crf {
            cfg.pipeline.crf = false;
        }
        if let Some(t) = self.crf_iterations {
            cfg.crf.iterations = t;
        }
        if self.no_carve {
            cfg.grid.carve_free_space = false;
        }
        if let Some(r) = self.resolution {
            cfg.grid.resolution = r;
        }
        if self.single_threaded {
            cfg.pipeline.pipelined = false;
            cfg.pipeline.exec = Exec::Sequential;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct FrameArgs {
    /// Directory of .ply/.pcd frames.
    #[arg(long)]
    frames: PathBuf,
    /// Trajectory file; `<frames>/trajectory.txt` or file headers otherwise.
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

impl FrameArgs {
    fn open(&self, cfg: &PipelineConfig) -> Result<FrameSource> {
        FrameSource::open_dir(&self.frames, self.trajectory.as_deref(), cfg.labels.directory.as_deref())
    }
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[command(flatten)]
    frames: FrameArgs,
    /// Output directory for map.snm, map_color.ply and map_material.ply.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    snapshot: PathBuf,
    #[arg(long, value_enum, default_value = "material")]
    mode: ModeArg,
    /// Material database for palette colors; built-in when omitted.
    #[arg(long)]
    materials: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    snapshot: PathBuf,
    #[arg(long)]
    materials: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[command(flatten)]
    frames: FrameArgs,
    /// Frames to time; the source is cycled when it has fewer.
    #[arg(long, default_value_t = 50)]
    samples: usize,
}

#[derive(Args, Debug)]
struct CrfArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// RGB PNG.
    #[arg(long)]
    image: PathBuf,
    /// Label map (PNG or PGM) of the same size.
    #[arg(long)]
    labels: PathBuf,
    /// Refined label map (PNG or PGM).
    #[arg(long, short)]
    out: PathBuf,
    /// Also write the refined probabilities as a float32 tensor.
    #[arg(long)]
    probs: Option<PathBuf>,
}

fn print_json<T: Serialize>(v: &T) {
    let text = serde_json::to_string_pretty(v).expect("report serializes");
    // A closed pipe on stdout is not an error worth reporting.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn load_db(path: Option<&Path>) -> Result<MaterialDatabase> {
    path.map_or_else(|| Ok(MaterialDatabase::builtin()), MaterialDatabase::load)
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    frames: usize,
    points: usize,
    out: &'a Path,
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let scene = a.scene.as_ref().map_or_else(|| Ok(SceneSpec::office()), SceneSpec::load)?;
    let sensor = a.sensor.as_ref().map_or_else(|| Ok(SensorSpec::default()), SensorSpec::load)?;
    let mut path = PathSpec::load(&a.path)?;
    if let Some(s) = a.seed {
        path.seed = s;
    }
    let exec = if a.sequential { Exec::Sequential } else { Exec::Parallel };
    let frames = simulate(&scene, &sensor, &path, exec)?;
    write_frames(&frames, &a.out)?;
    print_json(&SimulateReport { frames: frames.len(), points: frames.iter().map(|f| f.frame.len()).sum(), out: &a.out });
    Ok(())
}

fn cmd_build(a: &BuildArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let source = a.frames.open(&cfg)?;
    if source.is_empty() {
        warn!("{}: no frames found", a.frames.frames.display());
    }
    let pipeline = Pipeline::new(cfg)?;
    let summary = pipeline.run_build_map(&source, &a.out)?;
    info!("map written to {}", a.out.display());
    print_json(&summary);
    Ok(())
}

fn cmd_export(a: &ExportArgs) -> Result<()> {
    let grid = read_snapshot(&a.snapshot)?;
    let db = load_db(a.materials.as_deref())?;
    let mode = match a.mode {
        ModeArg::Color => ExportMode::Color,
        ModeArg::Material => ExportMode::Material,
    };
    export_map(&grid, mode, &db, &a.out)
}

fn cmd_stats(a: &StatsArgs) -> Result<()> {
    let grid = read_snapshot(&a.snapshot)?;
    print_json(&grid.map_stats(&load_db(a.materials.as_deref())?));
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let source = a.frames.open(&cfg)?;
    let report = Pipeline::new(cfg)?.bench(&source, a.samples)?;
    print_json(&report);
    Ok(())
}

fn cmd_crf(a: &CrfArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let remap = cfg.load_remap()?;
    let (w, h, colors) = read_png_rgb(&a.image)?;
    let hard = load_label_map(&a.labels, (w, h), remap.as_ref())?;
    let unary = unary_from_labels(&hard, cfg.crf.unary_confidence)?;
    let refined = densecrf_refine(&unary, &colors, &cfg.crf, cfg.pipeline.exec)?;
    save_label_map(&a.out, w, h, &refined.argmax_labels())?;
    if let Some(p) = &a.probs {
        write_prob_tensor(&refined, p)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::BuildMap(a) => cmd_build(a),
        Command::Export(a) => cmd_export(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Bench(a) => cmd_bench(a),
        Command::CrfRefine(a) => cmd_crf(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
