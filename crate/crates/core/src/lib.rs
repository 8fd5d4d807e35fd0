//! Voxel occupancy mapping with per-cell acoustic material estimation.
//!
//! Posed RGB point-cloud frames are projected into a 2-D image, labeled
//! (external label maps or synthetic ground truth), optionally refined with a
//! fully-connected CRF, mapped to acoustic materials, and fused into a sparse
//! voxel grid whose cells keep log-odds occupancy, a running color and a
//! material histogram.
//!
//! Data-parallel loops go through [`exec`]; with the `parallel` feature
//! disabled every [`Exec`] mode runs sequentially and produces the same bits.

pub mod error;
pub mod exec;
pub mod imageio;
pub mod material_db;
pub mod pipeline;
pub mod pointcloud;
pub mod projection;
pub mod segmentation;
pub mod synthetic;
pub mod voxelmap;

pub use error::{Error, Result};
pub use exec::Exec;
pub use material_db::{AcousticMaterial, MatchingTable, MaterialDatabase, MaterialId, SemanticLabel};
pub use pointcloud::{Point, PointCloudFrame, Pose};
pub use projection::{CameraModel, ReconstructedImage};
pub use segmentation::{CrfParams, LabelField};
pub use voxelmap::{GridParams, OccupancyGrid, VoxelKey};

/// 8-bit RGB triple.
pub type Rgb = [u8; 3];
