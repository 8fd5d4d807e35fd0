//! Sparse voxel grid fusing log-odds occupancy, running color and a
//! per-cell material histogram.

mod export;
mod raycast;
mod snapshot;

use nalgebra::Vector3;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::exec::{self, Exec};
use crate::material_db::{MaterialDatabase, MaterialId, LABEL_COUNT};
use crate::{Error, Point, Result};

pub use export::{export_map, ExportMode};
pub use raycast::traverse;
pub use snapshot::{read_snapshot, write_snapshot, SNAPSHOT_MAGIC};

/// Histogram bins: one per material id, the last being `Unknown`.
pub const HISTOGRAM_BINS: usize = LABEL_COUNT;
pub const UNKNOWN_BIN: usize = HISTOGRAM_BINS - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VoxelKey {
    pub i: i32,
    pub j: i32,
    pub k: i32,
}

impl VoxelKey {
    pub fn new(i: i32, j: i32, k: i32) -> Self {
        Self { i, j, k }
    }

    /// `floor(p / resolution)` per axis.
    pub fn from_point(p: &Vector3<f64>, resolution: f64) -> Self {
        let f = |c: f64| (c / resolution).floor() as i32;
        Self { i: f(p.x), j: f(p.y), k: f(p.z) }
    }

    pub fn center(&self, resolution: f64) -> Vector3<f64> {
        Vector3::new(self.i as f64 + 0.5, self.j as f64 + 0.5, self.k as f64 + 0.5) * resolution
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VoxelCell {
    pub log_odds: f32,
    pub color_mean: [f64; 3],
    pub color_count: u32,
    pub histogram: [u32; HISTOGRAM_BINS],
}

impl VoxelCell {
    pub fn observations(&self) -> u64 {
        self.histogram.iter().map(|&c| c as u64).sum()
    }

    /// Majority material: lowest id among the largest known bins; `Unknown`
    /// only when no known bin is set; `None` for an empty histogram.
    pub fn material_mode(&self) -> Option<MaterialId> {
        let known = &self.histogram[..UNKNOWN_BIN];
        let mut best = 0;
        for (id, &c) in known.iter().enumerate() {
            if c > known[best] {
                best = id;
            }
        }
        if known[best] > 0 {
            Some(MaterialId(best as u8))
        } else if self.histogram[UNKNOWN_BIN] > 0 {
            Some(MaterialId(UNKNOWN_BIN as u8))
        } else {
            None
        }
    }

    pub fn color_rgb(&self) -> crate::Rgb {
        self.color_mean.map(|c| c.round().clamp(0.0, 255.0) as u8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridParams {
    /// Cell edge, meters.
    pub resolution: f64,
    pub l_hit: f32,
    pub l_miss: f32,
    pub l_min: f32,
    pub l_max: f32,
    /// Occupied when `logistic(log_odds) >= p_occ`.
    pub p_occ: f64,
    /// Mark cells along each sensor ray as free.
    pub carve_free_space: bool,
    /// Carving stops this far from the sensor, meters.
    pub max_range: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            resolution: 0.1,
            l_hit: 0.85,
            l_miss: -0.4,
            l_min: -2.0,
            l_max: 3.5,
            p_occ: 0.97,
            carve_free_space: true,
            max_range: 8.0,
        }
    }
}

impl GridParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: String| Err(Error::validation(format!("grid.{f}"), m));
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return bad("resolution", format!("{} must be positive", self.resolution));
        }
        if !(self.l_hit > 0.0 && self.l_hit.is_finite()) || !(self.l_miss < 0.0 && self.l_miss.is_finite()) {
            return bad("l_hit", format!("need l_hit > 0 > l_miss, got {} and {}", self.l_hit, self.l_miss));
        }
        if !(self.l_min < 0.0 && self.l_max > 0.0 && self.l_min.is_finite() && self.l_max.is_finite()) {
            return bad("l_min", format!("need l_min < 0 < l_max, got {} and {}", self.l_min, self.l_max));
        }
        if !(self.p_occ > 0.0 && self.p_occ < 1.0) {
            return bad("p_occ", format!("{} must lie in (0, 1)", self.p_occ));
        }
        if !(self.max_range > 0.0) {
            return bad("max_range", format!("{} must be positive", self.max_range));
        }
        Ok(())
    }

    /// Log-odds at or above which a cell counts as occupied.
    pub fn occupied_threshold(&self) -> f64 {
        (self.p_occ / (1.0 - self.p_occ)).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Occupancy {
    Occupied,
    Free,
    Unknown,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertStats {
    pub points: usize,
    pub hit_cells: usize,
    pub miss_cells: usize,
    pub new_cells: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    params: GridParams,
    cells: FxHashMap<VoxelKey, VoxelCell>,
}

// Dense bitsets over the frame's key bounding box are used for carving when
// they stay under this many cells; beyond that a hash set takes over.
const DENSE_CARVE_LIMIT: u64 = 1 << 26;
const CARVE_CHUNK: usize = 4096;

impl OccupancyGrid {
    pub fn new(params: GridParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, cells: FxHashMap::default() })
    }

    pub fn params(&self) -> &GridParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell(&self, key: &VoxelKey) -> Option<&VoxelCell> {
        self.cells.get(key)
    }

    pub fn key_of(&self, p: &Vector3<f64>) -> VoxelKey {
        VoxelKey::from_point(p, self.params.resolution)
    }

    /// Cells in key order.
    pub fn sorted_cells(&self) -> Vec<(VoxelKey, VoxelCell)> {
        let mut v: Vec<_> = self.cells.iter().map(|(k, c)| (*k, *c)).collect();
        v.sort_unstable_by_key(|(k, _)| *k);
        v
    }

    pub(crate) fn from_parts(params: GridParams, cells: FxHashMap<VoxelKey, VoxelCell>) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, cells })
    }

    /// Fuses one frame of world-frame points seen from `origin`.
    ///
    /// Each point's cell receives a hit, its color and its material; cells
    /// crossed by the segment from `origin` receive a miss when carving is
    /// enabled. Within the frame a cell gets at most one hit and one miss, and
    /// a hit suppresses the miss.
    pub fn insert_labeled_frame(
        &mut self,
        points: &[Point],
        materials: &[MaterialId],
        origin: &Vector3<f64>,
        exec: Exec,
    ) -> Result<InsertStats> {
        if points.len() != materials.len() {
            return Err(Error::Dimension(format!("{} points vs {} materials", points.len(), materials.len())));
        }
        if !origin.iter().all(|c| c.is_finite()) {
            return Err(Error::validation("sensor origin", "non-finite component"));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::validation("point", format!("point {i} is not finite")));
        }
        if let Some(i) = materials.iter().position(|m| m.0 as usize >= HISTOGRAM_BINS) {
            return Err(Error::validation("material id", format!("{} at point {i} is not below {HISTOGRAM_BINS}", materials[i])));
        }

        let res = self.params.resolution;
        let keys: Vec<VoxelKey> = exec::map_slice(exec, points, |p| VoxelKey::from_point(&p.position, res));
        let hits: FxHashSet<VoxelKey> = keys.iter().copied().collect();
        let misses = if self.params.carve_free_space { self.carve(points, origin, &hits, exec) } else { Vec::new() };

        let before = self.cells.len();
        let (l_min, l_max) = (self.params.l_min, self.params.l_max);
        for key in &misses {
            let c = self.cells.entry(*key).or_default();
            c.log_odds = (c.log_odds + self.params.l_miss).clamp(l_min, l_max);
        }
        let mut hit_keys: Vec<VoxelKey> = hits.iter().copied().collect();
        hit_keys.sort_unstable();
        for key in &hit_keys {
            let c = self.cells.entry(*key).or_default();
            c.log_odds = (c.log_odds + self.params.l_hit).clamp(l_min, l_max);
        }
        for ((key, p), m) in keys.iter().zip(points).zip(materials) {
            let c = self.cells.get_mut(key).expect("hit cell exists");
            c.color_count += 1;
            let n = c.color_count as f64;
            for (mean, v) in c.color_mean.iter_mut().zip(p.color) {
                *mean += (v as f64 - *mean) / n;
            }
            c.histogram[m.0 as usize] += 1;
        }
        Ok(InsertStats {
            points: points.len(),
            hit_cells: hit_keys.len(),
            miss_cells: misses.len(),
            new_cells: self.cells.len() - before,
        })
    }

    /// Distinct cells crossed by the sensor rays, minus the hit cells, sorted.
    fn carve(&self, points: &[Point], origin: &Vector3<f64>, hits: &FxHashSet<VoxelKey>, exec: Exec) -> Vec<VoxelKey> {
        let res = self.params.resolution;
        let max_range = self.params.max_range;
        let ray_end = |p: &Point| {
            let d = p.position - origin;
            let len = d.norm();
            if len > max_range {
                origin + d * (max_range / len)
            } else {
                p.position
            }
        };

        let o = VoxelKey::from_point(origin, res);
        let (mut lo, mut hi) = ([o.i, o.j, o.k], [o.i, o.j, o.k]);
        for p in points {
            let k = VoxelKey::from_point(&ray_end(p), res);
            for (a, v) in [k.i, k.j, k.k].into_iter().enumerate() {
                lo[a] = lo[a].min(v);
                hi[a] = hi[a].max(v);
            }
        }
        let dims: [u64; 3] = [0, 1, 2].map(|a| (hi[a] as i64 - lo[a] as i64 + 1) as u64);
        let volume = dims[0].saturating_mul(dims[1]).saturating_mul(dims[2]);

        let mut out: Vec<VoxelKey> = if volume <= DENSE_CARVE_LIMIT {
            let words = volume.div_ceil(64) as usize;
            let index = |k: VoxelKey| {
                let (x, y, z) = ((k.i - lo[0]) as u64, (k.j - lo[1]) as u64, (k.k - lo[2]) as u64);
                ((z * dims[1] + y) * dims[0] + x) as usize
            };
            let partial = exec::map_chunks(exec, points, CARVE_CHUNK, |_, chunk| {
                let mut bits = vec![0u64; words];
                for p in chunk {
                    traverse(origin, &ray_end(p), res, |k| {
                        let i = index(k);
                        bits[i / 64] |= 1 << (i % 64);
                    });
                }
                bits
            });
            let mut bits = vec![0u64; words];
            for part in partial {
                bits.iter_mut().zip(part).for_each(|(a, b)| *a |= b);
            }
            let mut out = Vec::new();
            for (w, &word) in bits.iter().enumerate() {
                let mut word = word;
                while word != 0 {
                    let i = (w * 64 + word.trailing_zeros() as usize) as u64;
                    word &= word - 1;
                    let (x, rest) = (i % dims[0], i / dims[0]);
                    let (y, z) = (rest % dims[1], rest / dims[1]);
                    out.push(VoxelKey::new(lo[0] + x as i32, lo[1] + y as i32, lo[2] + z as i32));
                }
            }
            out
        } else {
            let partial = exec::map_chunks(exec, points, CARVE_CHUNK, |_, chunk| {
                let mut set = FxHashSet::default();
                for p in chunk {
                    traverse(origin, &ray_end(p), res, |k| {
                        set.insert(k);
                    });
                }
                set
            });
            let mut set = FxHashSet::default();
            partial.into_iter().for_each(|s| set.extend(s));
            set.into_iter().collect()
        };
        out.retain(|k| !hits.contains(k));
        out.sort_unstable();
        out
    }

    pub fn query_occupancy(&self, key: &VoxelKey) -> Occupancy {
        match self.cells.get(key) {
            None => Occupancy::Unknown,
            Some(c) if self.is_occupied(c) => Occupancy::Occupied,
            Some(_) => Occupancy::Free,
        }
    }

    pub fn is_occupied(&self, cell: &VoxelCell) -> bool {
        cell.log_odds as f64 >= self.params.occupied_threshold()
    }

    /// Majority material of an occupied cell.
    pub fn query_material(&self, key: &VoxelKey) -> Option<MaterialId> {
        self.cells.get(key).filter(|c| self.is_occupied(c)).and_then(VoxelCell::material_mode)
    }

    /// Occupied cells in key order.
    pub fn occupied_cells(&self) -> Vec<(VoxelKey, VoxelCell)> {
        let mut v = self.sorted_cells();
        v.retain(|(_, c)| self.is_occupied(c));
        v
    }

    pub fn map_stats(&self, db: &MaterialDatabase) -> MapStats {
        let mut stats = MapStats {
            resolution: self.params.resolution,
            cells: self.cells.len(),
            occupied: 0,
            free: 0,
            materials: db.materials().iter().map(|m| MaterialCount { name: m.name.clone(), cells: 0 }).collect(),
            no_material: 0,
            memory_bytes: self.cells.capacity()
                * (std::mem::size_of::<(VoxelKey, VoxelCell)>() + 1)
                + std::mem::size_of::<Self>(),
            bounds: None,
        };
        let mut bounds: Option<([i32; 3], [i32; 3])> = None;
        for (k, c) in &self.cells {
            if !self.is_occupied(c) {
                stats.free += 1;
                continue;
            }
            stats.occupied += 1;
            match c.material_mode().and_then(|m| stats.materials.get_mut(m.0 as usize)) {
                Some(entry) => entry.cells += 1,
                None => stats.no_material += 1,
            }
            let key = [k.i, k.j, k.k];
            let b = bounds.get_or_insert((key, key));
            for a in 0..3 {
                b.0[a] = b.0[a].min(key[a]);
                b.1[a] = b.1[a].max(key[a]);
            }
        }
        stats.bounds = bounds.map(|(lo, hi)| Bounds {
            min: lo.map(|v| v as f64 * self.params.resolution),
            max: hi.map(|v| (v + 1) as f64 * self.params.resolution),
        });
        stats
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialCount {
    pub name: String,
    pub cells: usize,
}

/// World-space box covering all occupied cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapStats {
    pub resolution: f64,
    pub cells: usize,
    pub occupied: usize,
    pub free: usize,
    /// Occupied cells per majority material, in material id order.
    pub materials: Vec<MaterialCount>,
    /// Occupied cells whose histogram is empty.
    pub no_material: usize,
    pub memory_bytes: usize,
    pub bounds: Option<Bounds>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> OccupancyGrid {
        OccupancyGrid::new(GridParams::default()).unwrap()
    }

    fn origin() -> Vector3<f64> {
        Vector3::new(0.05, 0.05, 0.05)
    }

    fn insert(g: &mut OccupancyGrid, pts: &[[f64; 3]], m: u8) {
        let points: Vec<Point> = pts.iter().map(|p| Point::new(p[0], p[1], p[2], [10, 20, 30])).collect();
        let mats = vec![MaterialId(m); points.len()];
        g.insert_labeled_frame(&points, &mats, &origin(), Exec::Sequential).unwrap();
    }

    #[test]
    fn floor_keys() {
        assert_eq!(VoxelKey::from_point(&Vector3::new(0.0, 0.099, -0.01), 0.1), VoxelKey::new(0, 0, -1));
    }

    #[test]
    fn single_hit() {
        let mut g = grid();
        insert(&mut g, &[[0.05, 0.05, 0.05]], 4);
        let c = g.cell(&VoxelKey::new(0, 0, 0)).unwrap();
        assert_eq!(c.log_odds, 0.85);
        assert_eq!(c.observations(), 1);
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn collinear_ray() {
        let mut g = grid();
        insert(&mut g, &[[0.25, 0.05, 0.05]], 0);
        assert_eq!(g.cell(&VoxelKey::new(0, 0, 0)).unwrap().log_odds, -0.4);
        assert_eq!(g.cell(&VoxelKey::new(1, 0, 0)).unwrap().log_odds, -0.4);
        assert_eq!(g.cell(&VoxelKey::new(2, 0, 0)).unwrap().log_odds, 0.85);
        assert_eq!(g.cell(&VoxelKey::new(1, 0, 0)).unwrap().observations(), 0);
    }

    #[test]
    fn hit_then_equal_miss_cancels() {
        let p = GridParams { l_hit: 0.4, l_miss: -0.4, ..Default::default() };
        let mut g = OccupancyGrid::new(p).unwrap();
        insert(&mut g, &[[0.15, 0.05, 0.05]], 0);
        insert(&mut g, &[[0.25, 0.05, 0.05]], 0);
        assert_eq!(g.cell(&VoxelKey::new(1, 0, 0)).unwrap().log_odds, 0.0);
    }

    #[test]
    fn clamping_and_occupancy() {
        let mut g = grid();
        let k = VoxelKey::new(3, 0, 0);
        assert_eq!(g.query_occupancy(&k), Occupancy::Unknown);
        for _ in 0..10 {
            insert(&mut g, &[[0.35, 0.05, 0.05]], 0);
        }
        assert_eq!(g.cell(&k).unwrap().log_odds, 3.5);
        assert_eq!(g.query_occupancy(&k), Occupancy::Occupied);
        let k1 = VoxelKey::new(1, 0, 0);
        assert_eq!(g.cell(&k1).unwrap().log_odds, -2.0);
        assert_eq!(g.query_occupancy(&k1), Occupancy::Free);
    }

    #[test]
    fn hit_beats_miss_within_frame() {
        let mut g = grid();
        insert(&mut g, &[[0.15, 0.05, 0.05], [0.25, 0.05, 0.05], [0.26, 0.05, 0.05]], 0);
        assert_eq!(g.cell(&VoxelKey::new(1, 0, 0)).unwrap().log_odds, 0.85);
        assert_eq!(g.cell(&VoxelKey::new(2, 0, 0)).unwrap().log_odds, 0.85);
        assert_eq!(g.cell(&VoxelKey::new(2, 0, 0)).unwrap().observations(), 2);
    }

    fn cell_with(hist: &[(usize, u32)]) -> VoxelCell {
        let mut c = VoxelCell { log_odds: 3.5, ..Default::default() };
        for &(b, n) in hist {
            c.histogram[b] = n;
        }
        c
    }

    #[test]
    fn majority_rules() {
        assert_eq!(cell_with(&[(4, 5), (0, 2)]).material_mode(), Some(MaterialId(4)));
        assert_eq!(cell_with(&[(4, 3), (0, 3)]).material_mode(), Some(MaterialId(0)));
        assert_eq!(cell_with(&[(UNKNOWN_BIN, 10), (7, 1)]).material_mode(), Some(MaterialId(7)));
        assert_eq!(cell_with(&[(UNKNOWN_BIN, 10)]).material_mode(), Some(MaterialId(8)));
        assert_eq!(cell_with(&[]).material_mode(), None);
    }

    #[test]
    fn material_needs_occupancy() {
        let mut g = grid();
        insert(&mut g, &[[0.05, 0.05, 0.05]], 4);
        assert_eq!(g.query_material(&VoxelKey::new(0, 0, 0)), None);
        for _ in 0..4 {
            insert(&mut g, &[[0.05, 0.05, 0.05]], 4);
        }
        assert_eq!(g.query_material(&VoxelKey::new(0, 0, 0)), Some(MaterialId(4)));
    }

    #[test]
    fn rejects_bad_input() {
        let mut g = grid();
        let p = [Point::new(f64::NAN, 0.0, 0.0, [0; 3])];
        assert!(g.insert_labeled_frame(&p, &[MaterialId(0)], &origin(), Exec::Sequential).is_err());
        let p = [Point::new(0.0, 0.0, 0.0, [0; 3])];
        assert!(g.insert_labeled_frame(&p, &[MaterialId(9)], &origin(), Exec::Sequential).is_err());
        assert!(g.insert_labeled_frame(&p, &[], &origin(), Exec::Sequential).is_err());
        assert!(OccupancyGrid::new(GridParams { l_miss: 0.1, ..Default::default() }).is_err());
    }

    #[test]
    fn max_range_caps_carving_only() {
        let p = GridParams { max_range: 0.3, ..Default::default() };
        let mut g = OccupancyGrid::new(p).unwrap();
        insert(&mut g, &[[1.05, 0.05, 0.05]], 2);
        assert!(g.cell(&VoxelKey::new(2, 0, 0)).is_some());
        assert!(g.cell(&VoxelKey::new(5, 0, 0)).is_none());
        assert_eq!(g.cell(&VoxelKey::new(10, 0, 0)).unwrap().observations(), 1);
    }

    #[test]
    fn stats_on_empty_and_per_material() {
        let db = MaterialDatabase::builtin();
        let s = grid().map_stats(&db);
        assert_eq!((s.cells, s.occupied, s.free), (0, 0, 0));
        assert!(s.materials.iter().all(|m| m.cells == 0) && s.bounds.is_none());

        let p = GridParams { carve_free_space: false, ..Default::default() };
        let mut g = OccupancyGrid::new(p).unwrap();
        for m in 0..8u8 {
            for _ in 0..5 {
                insert(&mut g, &[[m as f64 + 0.05, 0.05, 0.05]], m);
            }
        }
        let s = g.map_stats(&db);
        assert_eq!(s.occupied, 8);
        assert!(s.materials[..8].iter().all(|m| m.cells == 1));
        assert!((s.bounds.unwrap().max[0] - 7.1).abs() < 1e-9);
    }
}
