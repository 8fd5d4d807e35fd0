use std::path::Path;

use serde::{Deserialize, Serialize};

use super::OccupancyGrid;
use crate::material_db::{MaterialDatabase, UNKNOWN_GRAY};
use crate::pointcloud::{write_ply, PlyEncoding};
use crate::{Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportMode {
    /// Running mean of the observed colors.
    Color,
    /// Palette color of the majority material; gray when there is none.
    Material,
}

/// One PLY vertex per occupied cell, at the cell center, in key order.
pub fn export_map(grid: &OccupancyGrid, mode: ExportMode, db: &MaterialDatabase, path: impl AsRef<Path>) -> Result<()> {
    let res = grid.params().resolution;
    let mut points = Vec::new();
    for (key, cell) in grid.occupied_cells() {
        let color = match mode {
            ExportMode::Color => cell.color_rgb(),
            ExportMode::Material => match cell.material_mode() {
                Some(m) => db.palette_color(m)?,
                None => UNKNOWN_GRAY,
            },
        };
        points.push(Point { position: key.center(res), color });
    }
    let mode_name = match mode {
        ExportMode::Color => "color",
        ExportMode::Material => "material",
    };
    let comments = [format!("sonomap grid {mode_name} resolution {res}")];
    write_ply(path, &points, &comments, PlyEncoding::BinaryLittleEndian)
}

#[cfg(test)]
mod tests {
    use nalgebra::Vector3;

    use super::*;
    use crate::pointcloud::read_ply;
    use crate::voxelmap::{GridParams, VoxelKey};
    use crate::{Exec, MaterialId};

    #[test]
    fn empty_grid_exports_zero_vertices() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.ply");
        let g = OccupancyGrid::new(GridParams::default()).unwrap();
        export_map(&g, ExportMode::Material, &MaterialDatabase::builtin(), &p).unwrap();
        assert!(read_ply(&p).unwrap().positions.is_empty());
    }

    #[test]
    fn concrete_cell_uses_palette() {
        let db = MaterialDatabase::builtin();
        let mut g = OccupancyGrid::new(GridParams::default()).unwrap();
        let pts = [Point::new(0.31, 0.52, 0.73, [1, 2, 3])];
        for _ in 0..5 {
            g.insert_labeled_frame(&pts, &[MaterialId(0)], &Vector3::new(0.0, 0.0, 0.0), Exec::Sequential).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ply");
        export_map(&g, ExportMode::Material, &db, &p).unwrap();
        let cloud = read_ply(&p).unwrap();
        assert_eq!(cloud.positions.len(), 1);
        assert_eq!(cloud.colors.unwrap()[0], db.palette_color(MaterialId(0)).unwrap());
        let c = VoxelKey::new(3, 5, 7).center(0.1);
        for a in 0..3 {
            assert_eq!(cloud.positions[0][a], c[a] as f32 as f64);
        }
    }
}
