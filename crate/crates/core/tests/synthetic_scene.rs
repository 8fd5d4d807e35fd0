use nalgebra::Vector3;
use proptest::prelude::*;

use sonomap::material_db::SemanticLabel;
use sonomap::pointcloud::to_world;
use sonomap::synthetic::{
    corrupt_labels, generate_trajectory, render_frame, sensor_pose, simulate, PathSpec, SceneSpec, SensorSpec, Waypoint,
};
use sonomap::Exec;

/// An axis-aligned face: `axis` fixed at `value`, bounded on the other two.
struct Face {
    axis: usize,
    value: f64,
    lo: [f64; 3],
    hi: [f64; 3],
    label: SemanticLabel,
}

fn faces(scene: &SceneSpec) -> Vec<Face> {
    let e = scene.extents;
    let mut out = Vec::new();
    for axis in 0..3 {
        for value in [0.0, e[axis]] {
            let label = match (axis, value == 0.0) {
                (2, true) => SemanticLabel::Floor,
                (2, false) => SemanticLabel::Ceiling,
                _ => SemanticLabel::Wall,
            };
            out.push(Face { axis, value, lo: [0.0; 3], hi: e, label });
        }
    }
    for b in &scene.boxes {
        for axis in 0..3 {
            for value in [b.min[axis], b.max[axis]] {
                out.push(Face { axis, value, lo: b.min, hi: b.max, label: b.label });
            }
        }
    }
    out
}

fn distance(face: &Face, p: &Vector3<f64>) -> f64 {
    let mut d2 = (p[face.axis] - face.value).powi(2);
    for a in (0..3).filter(|&a| a != face.axis) {
        let out = (face.lo[a] - p[a]).max(p[a] - face.hi[a]).max(0.0);
        d2 += out * out;
    }
    d2.sqrt()
}

fn office_waypoints() -> Vec<Waypoint> {
    vec![
        Waypoint { x: 1.2, y: 1.2, yaw_deg: 30.0 },
        Waypoint { x: 5.2, y: 1.5, yaw_deg: 120.0 },
        Waypoint { x: 5.0, y: 4.2, yaw_deg: 220.0 },
        Waypoint { x: 1.5, y: 4.0, yaw_deg: 330.0 },
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn noiseless_points_sit_on_their_labeled_faces(
        x in 0.6f64..6.1, y in 0.6f64..4.6, yaw in 0.0f64..360.0, seed in any::<u64>(),
    ) {
        let scene = SceneSpec::office();
        let sensor = SensorSpec { points_per_frame: 2_000, depth_noise: 0.0, max_range: 20.0, ..Default::default() };
        let pose = sensor_pose(x, y, yaw, sensor.height);
        prop_assume!(scene.is_free(&pose.translation));
        let f = render_frame(&scene, &sensor, &pose, 0.0, seed, Exec::Parallel).unwrap();
        prop_assert_eq!(f.frame.len(), 2_000);
        let world = to_world(&f.frame);
        let all = faces(&scene);
        for (p, label) in world.points.iter().zip(&f.labels) {
            let best = all.iter().map(|face| distance(face, &p.position)).fold(f64::INFINITY, f64::min);
            prop_assert!(best < 1e-9, "point {:?} is {best} from any face", p.position);
            let on: Vec<SemanticLabel> = all.iter().filter(|face| distance(face, &p.position) < 1e-9).map(|face| face.label).collect();
            prop_assert!(on.contains(label), "{label:?} not among {on:?}");
        }
    }

    #[test]
    fn noise_rate_is_close_to_requested(seed in any::<u64>(), p in 0.05f64..0.45) {
        let truth: Vec<SemanticLabel> = (0..100_000).map(|i| SemanticLabel::OBJECTS[i % 8]).collect();
        let noisy = corrupt_labels(&truth, p, seed).unwrap();
        let changed = truth.iter().zip(&noisy).filter(|(a, b)| a != b).count() as f64 / 1e5;
        prop_assert!((changed - p).abs() < 0.01);
        prop_assert!(noisy.iter().all(|l| *l != SemanticLabel::Unknown));
    }
}

#[test]
fn parallel_render_matches_sequential() {
    let scene = SceneSpec::office();
    let sensor = SensorSpec { points_per_frame: 5_000, ..Default::default() };
    let pose = sensor_pose(2.0, 2.0, 45.0, sensor.height);
    let a = render_frame(&scene, &sensor, &pose, 1.0, 77, Exec::Sequential).unwrap();
    let b = render_frame(&scene, &sensor, &pose, 1.0, 77, Exec::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn every_label_is_seen_on_a_loop() {
    let scene = SceneSpec::office();
    let sensor = SensorSpec { points_per_frame: 4_000, ..Default::default() };
    let mut waypoints = office_waypoints();
    waypoints.push(waypoints[0]);
    let path = PathSpec { frames_per_segment: 6, frame_interval: 0.1, seed: 3, waypoints };
    let frames = simulate(&scene, &sensor, &path, Exec::Parallel).unwrap();
    assert_eq!(frames.len(), 4 * 5 + 1);
    for label in SemanticLabel::OBJECTS {
        assert!(frames.iter().any(|f| f.labels.contains(&label)), "{label:?} never observed");
    }
    for (i, f) in frames.iter().enumerate() {
        assert!((f.frame.timestamp - i as f64 * 0.1).abs() < 1e-12);
    }
}

#[test]
fn trajectory_interpolates_and_rejects_walls() {
    let scene = SceneSpec::office();
    let wp = [Waypoint { x: 1.0, y: 1.0, yaw_deg: 0.0 }, Waypoint { x: 3.0, y: 2.0, yaw_deg: 90.0 }];
    let poses = generate_trajectory(&scene, &wp, 3, 1.08).unwrap();
    assert_eq!(poses.len(), 3);
    assert!((poses[1].translation - Vector3::new(2.0, 1.5, 1.08)).norm() < 1e-12);
    assert!(poses[1].rotation.angle_to(&sensor_pose(0.0, 0.0, 45.0, 0.0).rotation) < 1e-12);
    let outside = [Waypoint { x: 1.0, y: 1.0, yaw_deg: 0.0 }, Waypoint { x: 9.0, y: 1.0, yaw_deg: 0.0 }];
    assert!(generate_trajectory(&scene, &outside, 4, 1.08).is_err());
}
