//! Binary map snapshot, little-endian:
//!
//! ```text
//! magic       8 bytes  "SNMGRID1"
//! resolution  f64
//! l_hit       f32
//! l_miss      f32
//! l_min       f32
//! l_max       f32
//! p_occ       f64
//! max_range   f64
//! carving     u8       0 or 1
//! cell_count  u64
//! cells, sorted by (i, j, k):
//!   i, j, k   i32 × 3
//!   log_odds  f32
//!   color     u8 × 3   rounded running mean
//!   count     u32      colored insertions
//!   histogram u32 × 9
//! ```
//!
//! Cells are written in key order, so equal grids give equal bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rustc_hash::FxHashMap;

use super::{GridParams, OccupancyGrid, VoxelCell, VoxelKey, HISTOGRAM_BINS};
use crate::{Error, Result};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"SNMGRID1";

pub fn write_snapshot(grid: &OccupancyGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_to(grid, &mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_to<W: Write>(grid: &OccupancyGrid, w: &mut W) -> std::io::Result<()> {
    let p = grid.params();
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_f64::<LittleEndian>(p.resolution)?;
    for v in [p.l_hit, p.l_miss, p.l_min, p.l_max] {
        w.write_f32::<LittleEndian>(v)?;
    }
    w.write_f64::<LittleEndian>(p.p_occ)?;
    w.write_f64::<LittleEndian>(p.max_range)?;
    w.write_u8(p.carve_free_space as u8)?;
    let cells = grid.sorted_cells();
    w.write_u64::<LittleEndian>(cells.len() as u64)?;
    for (k, c) in cells {
        for v in [k.i, k.j, k.k] {
            w.write_i32::<LittleEndian>(v)?;
        }
        w.write_f32::<LittleEndian>(c.log_odds)?;
        w.write_all(&c.color_rgb())?;
        w.write_u32::<LittleEndian>(c.color_count)?;
        for h in c.histogram {
            w.write_u32::<LittleEndian>(h)?;
        }
    }
    Ok(())
}

/// Loads a snapshot. Color means come back at 8-bit precision.
pub fn read_snapshot(path: impl AsRef<Path>) -> Result<OccupancyGrid> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(path, "truncated snapshot")
        } else {
            Error::io(path, e)
        }
    };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::format(path, "not a map snapshot"));
    }
    let resolution = r.read_f64::<LittleEndian>().map_err(io)?;
    let mut l = [0f32; 4];
    for v in &mut l {
        *v = r.read_f32::<LittleEndian>().map_err(io)?;
    }
    let p_occ = r.read_f64::<LittleEndian>().map_err(io)?;
    let max_range = r.read_f64::<LittleEndian>().map_err(io)?;
    let carve = match r.read_u8().map_err(io)? {
        0 => false,
        1 => true,
        v => return Err(Error::format(path, format!("carving flag {v}"))),
    };
    let params = GridParams { resolution, l_hit: l[0], l_miss: l[1], l_min: l[2], l_max: l[3], p_occ, carve_free_space: carve, max_range };
    params.validate().map_err(|e| Error::format(path, e.to_string()))?;

    let count = r.read_u64::<LittleEndian>().map_err(io)?;
    let mut cells = FxHashMap::default();
    for _ in 0..count {
        let key = VoxelKey {
            i: r.read_i32::<LittleEndian>().map_err(io)?,
            j: r.read_i32::<LittleEndian>().map_err(io)?,
            k: r.read_i32::<LittleEndian>().map_err(io)?,
        };
        let log_odds = r.read_f32::<LittleEndian>().map_err(io)?;
        if !(params.l_min..=params.l_max).contains(&log_odds) {
            return Err(Error::format(path, format!("log-odds {log_odds} outside clamp range")));
        }
        let mut rgb = [0u8; 3];
        r.read_exact(&mut rgb).map_err(io)?;
        let color_count = r.read_u32::<LittleEndian>().map_err(io)?;
        let mut histogram = [0u32; HISTOGRAM_BINS];
        for h in &mut histogram {
            *h = r.read_u32::<LittleEndian>().map_err(io)?;
        }
        let cell = VoxelCell { log_odds, color_mean: rgb.map(f64::from), color_count, histogram };
        if cells.insert(key, cell).is_some() {
            return Err(Error::format(path, format!("duplicate cell {key:?}")));
        }
    }
    if r.read_u8().is_ok() {
        return Err(Error::format(path, "trailing bytes after last cell"));
    }
    OccupancyGrid::from_parts(params, cells)
}

#[cfg(test)]
mod tests {
    use nalgebra::Vector3;

    use super::*;
    use crate::{Exec, MaterialId, Point};

    #[test]
    fn round_trip_bytes() {
        let mut g = OccupancyGrid::new(GridParams::default()).unwrap();
        let pts: Vec<Point> = (0..50).map(|i| Point::new(1.0 + i as f64 * 0.03, 0.4, -0.2, [i as u8, 7, 200])).collect();
        let mats: Vec<MaterialId> = (0..50).map(|i| MaterialId((i % 9) as u8)).collect();
        g.insert_labeled_frame(&pts, &mats, &Vector3::new(0.0, 0.0, 0.0), Exec::Sequential).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
        write_snapshot(&g, &a).unwrap();
        let back = read_snapshot(&a).unwrap();
        assert_eq!(back.len(), g.len());
        write_snapshot(&back, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        std::fs::write(&p, b"SNMGRID1\0\0").unwrap();
        assert!(matches!(read_snapshot(&p), Err(Error::Format { .. })));
        std::fs::write(&p, b"nope").unwrap();
        assert!(read_snapshot(&p).is_err());
    }
}
