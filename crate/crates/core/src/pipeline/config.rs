use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::material_db::{MatchingTable, MaterialDatabase};
use crate::segmentation::{CrfParams, LabelRemap};
use crate::{CameraModel, Error, GridParams, Result};

/// Where per-pixel labels come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    /// Label map images, one per frame (`<stem>.label.png` or `.pgm`).
    External,
    /// Per-point ground truth carried with the frame (`<stem>.gt`).
    #[default]
    Synthetic,
    /// Ground truth with seeded random label noise.
    SyntheticNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    pub source: LabelSource,
    /// Directory of label maps for the external source; defaults to the
    /// frame directory.
    pub directory: Option<PathBuf>,
    /// Class-id remap file applied to external label maps.
    pub remap: Option<PathBuf>,
    /// Apply the built-in ADE20k remap when no remap file is given.
    pub ade20k: bool,
    /// Replacement probability for the noisy synthetic source.
    pub noise: f64,
    pub seed: u64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self { source: LabelSource::Synthetic, directory: None, remap: None, ade20k: false, noise: 0.3, seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialsConfig {
    /// Material database file; the built-in database when absent.
    pub database: Option<PathBuf>,
    /// Label → material table; the built-in table when absent.
    pub matching: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoleFillConfig {
    pub kernel: usize,
    pub max_iterations: usize,
}

impl Default for HoleFillConfig {
    fn default() -> Self {
        Self { kernel: 5, max_iterations: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Refine labels with the CRF before back-projection.
    pub crf: bool,
    /// Overlap per-frame processing with map insertion.
    pub pipelined: bool,
    pub exec: Exec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { crf: false, pipelined: true, exec: Exec::Parallel }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub camera: CameraModel,
    pub crf: CrfParams,
    pub grid: GridParams,
    pub hole_fill: HoleFillConfig,
    pub materials: MaterialsConfig,
    pub labels: LabelConfig,
    pub pipeline: RunConfig,
}

impl PipelineConfig {
    /// Parses a TOML config. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.materials.database,
            &mut cfg.materials.matching,
            &mut cfg.labels.directory,
            &mut cfg.labels.remap,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        self.crf.validate()?;
        self.grid.validate()?;
        let k = self.hole_fill.kernel;
        if k < 3 || k % 2 == 0 {
            return Err(Error::validation("hole_fill.kernel", format!("{k} must be odd and >= 3")));
        }
        if !(0.0..0.5).contains(&self.labels.noise) {
            return Err(Error::validation("labels.noise", format!("{} outside [0, 0.5)", self.labels.noise)));
        }
        for (field, p) in [
            ("materials.database", &self.materials.database),
            ("materials.matching", &self.materials.matching),
            ("labels.remap", &self.labels.remap),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::validation(field, format!("{} does not exist", p.display())));
                }
            }
        }
        if let Some(d) = &self.labels.directory {
            if !d.is_dir() {
                return Err(Error::validation("labels.directory", format!("{} is not a directory", d.display())));
            }
        }
        Ok(())
    }

    pub fn load_materials(&self) -> Result<(MaterialDatabase, MatchingTable)> {
        let db = match &self.materials.database {
            Some(p) => MaterialDatabase::load(p)?,
            None => MaterialDatabase::builtin(),
        };
        let table = match &self.materials.matching {
            Some(p) => MatchingTable::load(p, &db)?,
            None => MatchingTable::builtin(&db)?,
        };
        Ok((db, table))
    }

    pub fn load_remap(&self) -> Result<Option<LabelRemap>> {
        Ok(match (&self.labels.remap, self.labels.ade20k) {
            (Some(p), _) => Some(LabelRemap::load(p)?),
            (None, true) => Some(LabelRemap::ade20k()),
            (None, false) => None,
        })
    }
}
