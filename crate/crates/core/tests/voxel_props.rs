use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sonomap::material_db::MaterialDatabase;
use sonomap::voxelmap::{
    export_map, read_snapshot, traverse, write_snapshot, ExportMode, Occupancy, HISTOGRAM_BINS, UNKNOWN_BIN,
};
use sonomap::{Exec, GridParams, MaterialId, OccupancyGrid, Point, VoxelKey};

struct Frame {
    points: Vec<Point>,
    materials: Vec<MaterialId>,
    origin: Vector3<f64>,
}

/// Frames of points in a 1 m cube, most of them clustered on a few cells so
/// histograms fill up and ties occur.
fn random_frames(seed: u64, max_points: usize) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_frames = rng.random_range(1..=6);
    let total = rng.random_range(1..=max_points);
    let n_materials = rng.random_range(1..=HISTOGRAM_BINS) as u8;
    let hot: Vec<[f64; 3]> = (0..4).map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
    (0..n_frames)
        .map(|_| {
            let n = (total / n_frames).max(1);
            let points: Vec<Point> = (0..n)
                .map(|_| {
                    let p = if rng.random_bool(0.7) {
                        let h = hot[rng.random_range(0..hot.len())];
                        [h[0] + rng.random_range(-0.03..0.03), h[1] + rng.random_range(-0.03..0.03), h[2]]
                    } else {
                        [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]
                    };
                    Point::new(p[0], p[1], p[2], [rng.random(), rng.random(), rng.random()])
                })
                .collect();
            let materials = (0..n).map(|_| MaterialId(rng.random_range(0..n_materials))).collect();
            let origin = Vector3::new(rng.random_range(-1.0..2.0), rng.random_range(-1.0..2.0), rng.random_range(-1.0..2.0));
            Frame { points, materials, origin }
        })
        .collect()
}

fn build(params: GridParams, frames: &[Frame], exec: Exec) -> OccupancyGrid {
    let mut g = OccupancyGrid::new(params).unwrap();
    for f in frames {
        g.insert_labeled_frame(&f.points, &f.materials, &f.origin, exec).unwrap();
    }
    g
}

/// Majority over the raw insertion log: lowest id among the most frequent
/// known materials, the unknown bin only when nothing else was seen.
fn brute_mode(log: &[MaterialId]) -> Option<MaterialId> {
    let mut counts = [0usize; HISTOGRAM_BINS];
    log.iter().for_each(|m| counts[m.0 as usize] += 1);
    let best = (0..UNKNOWN_BIN).filter(|&m| counts[m] > 0).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)));
    match best {
        Some(m) => Some(MaterialId(m as u8)),
        None if counts[UNKNOWN_BIN] > 0 => Some(MaterialId(UNKNOWN_BIN as u8)),
        None => None,
    }
}

fn insertion_log(frames: &[Frame], res: f64) -> BTreeMap<VoxelKey, Vec<(MaterialId, [u8; 3])>> {
    let mut log: BTreeMap<VoxelKey, Vec<_>> = BTreeMap::new();
    for f in frames {
        for (p, m) in f.points.iter().zip(&f.materials) {
            log.entry(VoxelKey::from_point(&p.position, res)).or_default().push((*m, p.color));
        }
    }
    log
}

/// Log-odds without carving: one clamped hit per frame per touched cell.
fn hit_only_log_odds(frames: &[Frame], p: &GridParams) -> BTreeMap<VoxelKey, f32> {
    let mut out = BTreeMap::new();
    for f in frames {
        let keys: BTreeSet<VoxelKey> = f.points.iter().map(|q| VoxelKey::from_point(&q.position, p.resolution)).collect();
        for k in keys {
            let v = out.entry(k).or_insert(0.0f32);
            *v = (*v + p.l_hit).clamp(p.l_min, p.l_max);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn material_matches_brute_force_mode(seed in any::<u64>()) {
        let frames = random_frames(seed, 10_000);
        // Low threshold so most touched cells count as occupied.
        let params = GridParams { carve_free_space: false, p_occ: 0.6, ..Default::default() };
        let grid = build(params, &frames, Exec::Parallel);
        let log = insertion_log(&frames, params.resolution);
        let expected_odds = hit_only_log_odds(&frames, &params);
        prop_assert_eq!(grid.len(), log.len());
        let mut inserted = 0u64;
        for (key, entries) in &log {
            let cell = grid.cell(key).unwrap();
            let odds = expected_odds[key];
            prop_assert_eq!(cell.log_odds, odds);
            let occupied = 1.0 / (1.0 + (-(odds as f64)).exp()) >= params.p_occ;
            let mats: Vec<MaterialId> = entries.iter().map(|e| e.0).collect();
            let want = if occupied { brute_mode(&mats) } else { None };
            prop_assert_eq!(grid.query_material(key), want);
            prop_assert_eq!(cell.material_mode(), brute_mode(&mats));
            prop_assert_eq!(cell.observations(), entries.len() as u64);
            inserted += entries.len() as u64;
        }
        let total: u64 = grid.sorted_cells().iter().map(|(_, c)| c.observations()).sum();
        prop_assert_eq!(total, inserted);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn carving_keeps_histograms_and_clamps(seed in any::<u64>()) {
        let frames = random_frames(seed, 3_000);
        let params = GridParams::default();
        let mut grid = OccupancyGrid::new(params).unwrap();
        for f in &frames {
            grid.insert_labeled_frame(&f.points, &f.materials, &f.origin, Exec::Parallel).unwrap();
            for (_, c) in grid.sorted_cells() {
                prop_assert!(c.log_odds >= params.l_min && c.log_odds <= params.l_max);
            }
        }
        let log = insertion_log(&frames, params.resolution);
        let total: u64 = grid.sorted_cells().iter().map(|(_, c)| c.observations()).sum();
        prop_assert_eq!(total, log.values().map(|v| v.len() as u64).sum::<u64>());
        for (key, entries) in &log {
            let mats: Vec<MaterialId> = entries.iter().map(|e| e.0).collect();
            prop_assert_eq!(grid.cell(key).unwrap().material_mode(), brute_mode(&mats));
        }
        for (key, cell) in grid.sorted_cells() {
            if !log.contains_key(&key) {
                prop_assert_eq!(cell.observations(), 0);
                prop_assert!(cell.log_odds < 0.0);
            }
        }
    }

    #[test]
    fn within_frame_order_does_not_matter(seed in any::<u64>()) {
        let frames = random_frames(seed, 4_000);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let shuffled: Vec<Frame> = frames
            .iter()
            .map(|f| {
                let mut order: Vec<usize> = (0..f.points.len()).collect();
                order.shuffle(&mut rng);
                Frame {
                    points: order.iter().map(|&i| f.points[i]).collect(),
                    materials: order.iter().map(|&i| f.materials[i]).collect(),
                    origin: f.origin,
                }
            })
            .collect();
        let a = build(GridParams::default(), &frames, Exec::Sequential);
        let b = build(GridParams::default(), &shuffled, Exec::Parallel);
        prop_assert_eq!(a.len(), b.len());
        for ((ka, ca), (kb, cb)) in a.sorted_cells().iter().zip(b.sorted_cells().iter()) {
            prop_assert_eq!(ka, kb);
            prop_assert_eq!(ca.log_odds, cb.log_odds);
            prop_assert_eq!(ca.histogram, cb.histogram);
            prop_assert_eq!(a.query_material(ka), b.query_material(kb));
            prop_assert_eq!(a.query_occupancy(ka), b.query_occupancy(kb));
        }
    }

    #[test]
    fn color_mean_tracks_exact_mean(seed in any::<u64>()) {
        let frames = random_frames(seed, 5_000);
        let grid = build(GridParams::default(), &frames, Exec::Parallel);
        for (key, entries) in insertion_log(&frames, 0.1) {
            let cell = grid.cell(&key).unwrap();
            prop_assert_eq!(cell.color_count as usize, entries.len());
            for ch in 0..3 {
                let exact = entries.iter().map(|e| e.1[ch] as f64).sum::<f64>() / entries.len() as f64;
                prop_assert!((cell.color_mean[ch] - exact).abs() <= 0.5);
                prop_assert!((cell.color_rgb()[ch] as f64 - exact).abs() <= 0.5 + 1e-9);
            }
        }
    }

    #[test]
    fn snapshot_round_trip(seed in any::<u64>()) {
        let frames = random_frames(seed, 1_500);
        let grid = build(GridParams::default(), &frames, Exec::Parallel);
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.snm"), dir.path().join("b.snm"));
        write_snapshot(&grid, &a).unwrap();
        let back = read_snapshot(&a).unwrap();
        write_snapshot(&back, &b).unwrap();
        prop_assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        prop_assert_eq!(back.len(), grid.len());
        for (k, c) in grid.sorted_cells() {
            let d = back.cell(&k).unwrap();
            prop_assert_eq!(c.log_odds, d.log_odds);
            prop_assert_eq!(c.histogram, d.histogram);
            prop_assert_eq!(back.query_material(&k), grid.query_material(&k));
        }
    }
}

fn key_of(p: &Vector3<f64>) -> VoxelKey {
    VoxelKey::from_point(p, 0.1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// The traversal is a 6-connected path whose length is the L1 distance
    /// between end cells, and it covers every cell a dense sampling of the
    /// segment lands in.
    #[test]
    fn traversal_is_connected_and_covering(
        a in prop::array::uniform3(-2.0f64..2.0),
        b in prop::array::uniform3(-2.0f64..2.0),
    ) {
        let (a, b) = (Vector3::from(a), Vector3::from(b));
        let mut visited = Vec::new();
        traverse(&a, &b, 0.1, |k| visited.push(k));
        let (ka, kb) = (key_of(&a), key_of(&b));
        let l1 = (ka.i - kb.i).abs() + (ka.j - kb.j).abs() + (ka.k - kb.k).abs();
        prop_assert_eq!(visited.len() as i32, l1);
        if let Some(first) = visited.first() {
            prop_assert_eq!(*first, ka);
        }
        let mut prev: Option<VoxelKey> = None;
        for k in visited.iter().copied().chain(std::iter::once(kb)) {
            if let Some(p) = prev {
                prop_assert_eq!((k.i - p.i).abs() + (k.j - p.j).abs() + (k.k - p.k).abs(), 1);
            }
            prev = Some(k);
        }
        if ka != kb {
            let set: BTreeSet<VoxelKey> = visited.iter().copied().chain(std::iter::once(kb)).collect();
            let samples = 4000;
            let mut covered = 0;
            for s in 0..=samples {
                let t = s as f64 / samples as f64;
                if set.contains(&key_of(&(a + (b - a) * t))) {
                    covered += 1;
                }
            }
            // Sampling can clip a corner the exact line grazes; allow a handful.
            prop_assert!(covered >= samples - 4);
        }
    }
}

#[test]
fn occupancy_examples() {
    let mut g = OccupancyGrid::new(GridParams::default()).unwrap();
    let origin = Vector3::new(0.05, 0.05, 0.05);
    let k = VoxelKey::new(3, 0, 0);
    assert_eq!(g.query_occupancy(&k), Occupancy::Unknown);
    for _ in 0..10 {
        g.insert_labeled_frame(&[Point::new(0.35, 0.05, 0.05, [0; 3])], &[MaterialId(0)], &origin, Exec::Sequential).unwrap();
    }
    assert_eq!(g.cell(&k).unwrap().log_odds, 3.5);
    assert_eq!(g.query_occupancy(&k), Occupancy::Occupied);
    assert_eq!(g.query_occupancy(&VoxelKey::new(1, 0, 0)), Occupancy::Free);
}

#[test]
fn export_vertices_are_occupied_centers() {
    let frames = random_frames(99, 4_000);
    let params = GridParams { carve_free_space: false, p_occ: 0.6, ..Default::default() };
    let grid = build(params, &frames, Exec::Parallel);
    let db = MaterialDatabase::builtin();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ply");
    export_map(&grid, ExportMode::Material, &db, &path).unwrap();
    let cloud = sonomap::pointcloud::read_ply(&path).unwrap();
    let occupied = grid.occupied_cells();
    assert_eq!(cloud.positions.len(), occupied.len());
    for (pos, (k, _)) in cloud.positions.iter().zip(&occupied) {
        let c = k.center(0.1);
        for a in 0..3 {
            assert!((pos[a] - c[a]).abs() < 1e-6);
        }
    }
    let colors = cloud.colors.unwrap();
    for (col, (k, _)) in colors.iter().zip(&occupied) {
        let m = grid.query_material(k).unwrap();
        assert_eq!(*col, db.palette_color(m).unwrap());
    }
}
