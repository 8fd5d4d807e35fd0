//! Integer voxel traversal along a segment (Amanatides & Woo).

use nalgebra::Vector3;

use super::VoxelKey;

/// Calls `visit` for every cell the segment `start → end` passes through,
/// starting with the cell of `start` and stopping before the cell of `end`.
///
/// The walk takes exactly one axis step per visited cell, so it never visits
/// more cells than the L1 distance between the two end keys.
pub fn traverse<F: FnMut(VoxelKey)>(start: &Vector3<f64>, end: &Vector3<f64>, resolution: f64, mut visit: F) {
    let from = VoxelKey::from_point(start, resolution);
    let to = VoxelKey::from_point(end, resolution);
    if from == to {
        return;
    }
    let dir = end - start;
    let mut cur = [from.i, from.j, from.k];
    let target = [to.i, to.j, to.k];
    let mut step = [0i32; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        if target[a] == cur[a] && dir[a] == 0.0 {
            continue;
        }
        step[a] = if target[a] > cur[a] || (target[a] == cur[a] && dir[a] > 0.0) { 1 } else { -1 };
        if dir[a] != 0.0 {
            let boundary = (cur[a] + (step[a] > 0) as i32) as f64 * resolution;
            t_max[a] = ((boundary - start[a]) / dir[a]).max(0.0);
            t_delta[a] = (resolution / dir[a]).abs();
        }
    }
    let budget: u32 = (0..3).map(|a| target[a].abs_diff(cur[a])).sum();
    for _ in 0..budget {
        visit(VoxelKey { i: cur[0], j: cur[1], k: cur[2] });
        // Only axes that still have distance to cover may step; this keeps
        // the walk on target even when rounding puts a boundary crossing a
        // hair past the segment end.
        let mut axis = None;
        for a in 0..3 {
            if cur[a] != target[a] && axis.is_none_or(|b: usize| t_max[a] < t_max[b]) {
                axis = Some(a);
            }
        }
        let a = axis.expect("budget counts remaining steps");
        cur[a] += step[a];
        t_max[a] += t_delta[a];
    }
    debug_assert_eq!(cur, target);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cells(a: [f64; 3], b: [f64; 3], res: f64) -> Vec<VoxelKey> {
        let mut out = Vec::new();
        traverse(&Vector3::from(a), &Vector3::from(b), res, |k| out.push(k));
        out
    }

    #[test]
    fn axis_aligned_three_cells() {
        let got = cells([0.05, 0.05, 0.05], [0.25, 0.05, 0.05], 0.1);
        assert_eq!(got, vec![VoxelKey::new(0, 0, 0), VoxelKey::new(1, 0, 0)]);
    }

    #[test]
    fn same_cell_visits_nothing() {
        assert!(cells([0.01, 0.01, 0.01], [0.09, 0.02, 0.03], 0.1).is_empty());
    }

    #[test]
    fn negative_direction() {
        let got = cells([0.05, 0.05, 0.05], [-0.25, 0.05, 0.05], 0.1);
        assert_eq!(got, vec![VoxelKey::new(0, 0, 0), VoxelKey::new(-1, 0, 0), VoxelKey::new(-2, 0, 0)]);
    }

    #[test]
    fn diagonal_steps_are_face_connected() {
        let got = cells([0.05, 0.05, 0.05], [0.97, 0.61, 0.33], 0.1);
        let end = VoxelKey::from_point(&Vector3::new(0.97, 0.61, 0.33), 0.1);
        let mut all = got.clone();
        all.push(end);
        for w in all.windows(2) {
            let d = (w[0].i - w[1].i).abs() + (w[0].j - w[1].j).abs() + (w[0].k - w[1].k).abs();
            assert_eq!(d, 1);
        }
        assert_eq!(got.len(), 9 + 6 + 3);
    }
}
