//! Semantic labels, acoustic materials, and the label → material table.
//!
//! Both text formats are line oriented; `#` starts a comment line.
//!
//! Material database, one record per line:
//!
//! ```text
//! record     = id "|" name "|" absorption "|" color "|" provenance
//! id         = unsigned integer, dense from 0
//! absorption = 6 reals in [0,1] separated by whitespace
//!              (octave bands 125 250 500 1000 2000 4000 Hz)
//! color      = "#" 6 hex digits
//! provenance = free text to end of line
//! ```
//!
//! Matching table, exactly one line per semantic label:
//!
//! ```text
//! entry = label "=" material-name
//! ```

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Rgb};

/// Number of octave bands in an absorption spectrum.
pub const BAND_COUNT: usize = 6;
pub const OCTAVE_BANDS_HZ: [u32; BAND_COUNT] = [125, 250, 500, 1000, 2000, 4000];

/// Number of semantic labels, `Unknown` included.
pub const LABEL_COUNT: usize = 9;

/// Color reserved for cells and pixels without a material estimate.
pub const UNKNOWN_GRAY: Rgb = [128, 128, 128];

const BUILTIN_DATABASE: &str = include_str!("../data/materials.db");
const BUILTIN_MATCHING: &str = include_str!("../data/matching.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum SemanticLabel {
    Wall = 0,
    Floor = 1,
    Ceiling = 2,
    Window = 3,
    Furniture = 4,
    Door = 5,
    Electronics = 6,
    Chair = 7,
    Unknown = 8,
}

impl SemanticLabel {
    pub const ALL: [SemanticLabel; LABEL_COUNT] = [
        SemanticLabel::Wall,
        SemanticLabel::Floor,
        SemanticLabel::Ceiling,
        SemanticLabel::Window,
        SemanticLabel::Furniture,
        SemanticLabel::Door,
        SemanticLabel::Electronics,
        SemanticLabel::Chair,
        SemanticLabel::Unknown,
    ];

    /// The eight object labels, `Unknown` excluded.
    pub const OBJECTS: [SemanticLabel; 8] = [
        SemanticLabel::Wall,
        SemanticLabel::Floor,
        SemanticLabel::Ceiling,
        SemanticLabel::Window,
        SemanticLabel::Furniture,
        SemanticLabel::Door,
        SemanticLabel::Electronics,
        SemanticLabel::Chair,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SemanticLabel::Wall => "Wall",
            SemanticLabel::Floor => "Floor",
            SemanticLabel::Ceiling => "Ceiling",
            SemanticLabel::Window => "Window",
            SemanticLabel::Furniture => "Furniture",
            SemanticLabel::Door => "Door",
            SemanticLabel::Electronics => "Electronics",
            SemanticLabel::Chair => "Chair",
            SemanticLabel::Unknown => "Unknown",
        }
    }
}

impl fmt::Display for SemanticLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SemanticLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::validation("label", format!("unknown semantic label '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MaterialId(pub u8);

impl fmt::Display for MaterialId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcousticMaterial {
    pub id: MaterialId,
    pub name: String,
    /// Absorption coefficient per band of [`OCTAVE_BANDS_HZ`].
    pub absorption: [f64; BAND_COUNT],
    pub display_color: Rgb,
    pub provenance: String,
}

/// Validated, immutable list of materials indexed by id.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialDatabase {
    materials: Vec<AcousticMaterial>,
}

impl MaterialDatabase {
    pub fn new(materials: Vec<AcousticMaterial>) -> Result<Self> {
        validate_materials(&materials)?;
        Ok(Self { materials })
    }

    /// The database shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse_str(BUILTIN_DATABASE, Path::new("<builtin materials.db>"))
            .expect("shipped material database is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text, path)
    }

    /// Parses database text; `origin` only labels error messages.
    pub fn parse_str(text: &str, origin: &Path) -> Result<Self> {
        let mut materials = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.splitn(5, '|').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(Error::parse(
                    origin,
                    line_no,
                    format!("expected 5 '|'-separated fields, found {}", fields.len()),
                ));
            }
            let id: u8 = fields[0]
                .parse()
                .map_err(|_| Error::parse(origin, line_no, format!("bad material id '{}'", fields[0])))?;
            let name = fields[1].to_string();
            if name.is_empty() {
                return Err(Error::parse(origin, line_no, "empty material name"));
            }
            let coeffs: Vec<f64> = fields[2]
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::parse(origin, line_no, format!("bad absorption value '{t}'")))
                })
                .collect::<Result<_>>()?;
            let absorption: [f64; BAND_COUNT] = coeffs.try_into().map_err(|v: Vec<f64>| {
                Error::parse(origin, line_no, format!("expected {BAND_COUNT} absorption values, found {}", v.len()))
            })?;
            let display_color = parse_hex_color(fields[3])
                .ok_or_else(|| Error::parse(origin, line_no, format!("bad color '{}'", fields[3])))?;
            materials.push(AcousticMaterial {
                id: MaterialId(id),
                name,
                absorption,
                display_color,
                provenance: fields[4].to_string(),
            });
        }
        Self::new(materials)
    }

    /// Serializes in the same format [`MaterialDatabase::parse_str`] reads.
    pub fn to_db_string(&self) -> String {
        let mut out = String::from("# sonomap material database, format version 1\n");
        for m in &self.materials {
            let bands: Vec<String> = m.absorption.iter().map(|a| a.to_string()).collect();
            let [r, g, b] = m.display_color;
            let _ = writeln!(
                out,
                "{} | {} | {} | #{r:02x}{g:02x}{b:02x} | {}",
                m.id,
                m.name,
                bands.join(" "),
                m.provenance
            );
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_db_string()).map_err(|e| Error::io(path, e))
    }

    pub fn materials(&self) -> &[AcousticMaterial] {
        &self.materials
    }

    pub fn len(&self) -> usize {
        self.materials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.materials.is_empty()
    }

    pub fn get(&self, id: MaterialId) -> Option<&AcousticMaterial> {
        self.materials.get(id.0 as usize)
    }

    pub fn by_name(&self, name: &str) -> Option<&AcousticMaterial> {
        let name = name.trim();
        self.materials.iter().find(|m| m.name.eq_ignore_ascii_case(name))
    }

    pub fn palette_color(&self, id: MaterialId) -> Result<Rgb> {
        self.get(id)
            .map(|m| m.display_color)
            .ok_or_else(|| Error::validation("material id", format!("no material with id {id}")))
    }
}

fn validate_materials(materials: &[AcousticMaterial]) -> Result<()> {
    if materials.len() > u8::MAX as usize {
        return Err(Error::validation("materials", "too many materials"));
    }
    for (pos, m) in materials.iter().enumerate() {
        if m.id.0 as usize != pos {
            return Err(Error::validation(
                format!("id of '{}'", m.name),
                format!("ids must be unique and dense from 0; expected {pos}, found {}", m.id),
            ));
        }
        for (band, &a) in OCTAVE_BANDS_HZ.iter().zip(&m.absorption) {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::validation(
                    format!("absorption[{band} Hz] of '{}'", m.name),
                    format!("{a} is outside [0, 1]"),
                ));
            }
        }
        for other in &materials[..pos] {
            if other.display_color == m.display_color {
                return Err(Error::validation(
                    format!("display color of '{}'", m.name),
                    format!("same color as '{}'", other.name),
                ));
            }
            if other.name.eq_ignore_ascii_case(&m.name) {
                return Err(Error::validation("name", format!("duplicate material name '{}'", m.name)));
            }
        }
    }
    Ok(())
}

fn parse_hex_color(s: &str) -> Option<Rgb> {
    let hex = s.strip_prefix('#')?;
    if hex.len() != 6 || !hex.is_ascii() {
        return None;
    }
    let channel = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).ok();
    Some([channel(0)?, channel(2)?, channel(4)?])
}

/// Total mapping from every [`SemanticLabel`] to a material id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchingTable {
    ids: [MaterialId; LABEL_COUNT],
}

impl MatchingTable {
    pub fn builtin(db: &MaterialDatabase) -> Result<Self> {
        Self::parse_str(BUILTIN_MATCHING, db, Path::new("<builtin matching.txt>"))
    }

    pub fn load(path: impl AsRef<Path>, db: &MaterialDatabase) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text, db, path)
    }

    pub fn parse_str(text: &str, db: &MaterialDatabase, origin: &Path) -> Result<Self> {
        let mut ids: [Option<MaterialId>; LABEL_COUNT] = [None; LABEL_COUNT];
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (label, material) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, line_no, "expected '<label> = <material>'"))?;
            let label: SemanticLabel =
                label.parse().map_err(|e: Error| Error::parse(origin, line_no, e.to_string()))?;
            let material = db
                .by_name(material)
                .ok_or_else(|| Error::parse(origin, line_no, format!("unknown material '{}'", material.trim())))?;
            let slot = &mut ids[label.code() as usize];
            if slot.is_some() {
                return Err(Error::parse(origin, line_no, format!("duplicate entry for {label}")));
            }
            *slot = Some(material.id);
        }
        let mut out = [MaterialId(0); LABEL_COUNT];
        for (label, (dst, src)) in SemanticLabel::ALL.iter().zip(out.iter_mut().zip(ids)) {
            *dst = src.ok_or_else(|| Error::validation("matching table", format!("no entry for {label}")))?;
        }
        Ok(Self { ids: out })
    }

    pub fn lookup(&self, label: SemanticLabel) -> MaterialId {
        self.ids[label.code() as usize]
    }

    pub fn to_table_string(&self, db: &MaterialDatabase) -> String {
        let mut out = String::new();
        for label in SemanticLabel::ALL {
            let name = db.get(self.lookup(label)).map_or("?", |m| m.name.as_str());
            let _ = writeln!(out, "{label} = {name}");
        }
        out
    }
}

/// Material id for `label` under `table`.
pub fn lookup_material(label: SemanticLabel, table: &MatchingTable) -> MaterialId {
    table.lookup(label)
}
