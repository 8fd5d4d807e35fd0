//! Sequential vs. data-parallel execution of the per-frame stages.
//!
//! Without the `parallel` feature both variants run the same sequential code.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sonomap::material_db::{lookup_material, MatchingTable, MaterialDatabase};
use sonomap::pointcloud::to_world;
use sonomap::projection::{fill_holes, project_frame};
use sonomap::segmentation::{pairwise_messages, rgb_to_lab, CrfParams, LabelField, MessageEvaluator};
use sonomap::synthetic::{render_frame, sensor_pose, SceneSpec, SensorSpec, SyntheticFrame};
use sonomap::{CameraModel, Exec, GridParams, OccupancyGrid};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn frame() -> SyntheticFrame {
    let sensor = SensorSpec::default();
    render_frame(&SceneSpec::office(), &sensor, &sensor_pose(1.5, 1.5, 40.0, sensor.height), 0.0, 9, Exec::Parallel)
        .unwrap()
}

fn bench_render(c: &mut Criterion) {
    let scene = SceneSpec::office();
    let sensor = SensorSpec::default();
    let pose = sensor_pose(1.5, 1.5, 40.0, sensor.height);
    let mut g = c.benchmark_group("render_30k");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| render_frame(&scene, &sensor, &pose, 0.0, 9, exec).unwrap()));
    }
    g.finish();
}

fn bench_project_fill(c: &mut Criterion) {
    let f = frame();
    let cam = CameraModel::default();
    let mut g = c.benchmark_group("project_30k");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| project_frame(black_box(&f.frame), &cam, exec)));
    }
    g.finish();

    let img = project_frame(&f.frame, &cam, Exec::Parallel);
    let mut g = c.benchmark_group("fill_holes_640x480");
    g.sample_size(20);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| fill_holes(black_box(&img), 5, 8, exec).unwrap()));
    }
    g.finish();
}

fn bench_crf_messages(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = c.benchmark_group("crf_messages");
    g.sample_size(10);
    for side in [32u32, 80] {
        let n = (side * side) as usize;
        let ids: Vec<u8> = (0..n).map(|_| rng.random_range(0..9)).collect();
        let q = LabelField::from_hard_labels(side, side, &ids, 9).unwrap();
        let lab: Vec<[f64; 3]> = (0..n).map(|_| rgb_to_lab([rng.random(), rng.random(), rng.random()])).collect();
        let params = CrfParams::default();
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(name, side), &side, |b, _| {
                b.iter(|| pairwise_messages(&q, &lab, &params, MessageEvaluator::Windowed, exec))
            });
        }
    }
    g.finish();
}

fn bench_insert(c: &mut Criterion) {
    let f = frame();
    let db = MaterialDatabase::builtin();
    let table = MatchingTable::builtin(&db).unwrap();
    let world = to_world(&f.frame);
    let mats: Vec<_> = f.labels.iter().map(|&l| lookup_material(l, &table)).collect();
    let origin = f.frame.pose.translation;
    let mut g = c.benchmark_group("insert_30k");
    g.sample_size(30);
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter_batched(
                || OccupancyGrid::new(GridParams::default()).unwrap(),
                |mut grid| {
                    grid.insert_labeled_frame(&world.points, &mats, &origin, exec).unwrap();
                    grid
                },
                criterion::BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, bench_render, bench_project_fill, bench_crf_messages, bench_insert);
criterion_main!(benches);
