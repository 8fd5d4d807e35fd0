//! Label map files and the probability tensor dump.
//!
//! Label maps are 8-bit grayscale/indexed PNG or PGM whose samples are label
//! ids 0–8 (or upstream class ids when a [`LabelRemap`] is applied).
//!
//! Probability tensor layout, little-endian:
//!
//! ```text
//! magic      8 bytes  "SNMPROB1"
//! width      u32
//! height     u32
//! num_labels u32
//! probs      f32 × width·height·num_labels, row-major, label fastest
//! ```

use std::io::Write;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

use super::LabelField;
use crate::imageio::{self, Gray8};
use crate::material_db::{SemanticLabel, LABEL_COUNT};
use crate::{Error, Result};

const PROB_MAGIC: &[u8; 8] = b"SNMPROB1";
const BUILTIN_REMAP: &str = include_str!("../../data/ade20k_remap.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMapFormat {
    Png,
    Pgm,
}

impl LabelMapFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("png") => Ok(LabelMapFormat::Png),
            Some("pgm") => Ok(LabelMapFormat::Pgm),
            _ => Err(Error::format(path, "label map must be .png or .pgm")),
        }
    }
}

/// Upstream class id → semantic label id. Unlisted classes map to `Unknown`.
///
/// Text format, one entry per line: `<class_id> = <label_id>`; `#` starts a
/// comment anywhere on a line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRemap {
    table: [u8; 256],
}

impl LabelRemap {
    /// ADE20k (150 classes, 0-based) to the eight object labels.
    pub fn ade20k() -> Self {
        Self::parse_str(BUILTIN_REMAP, Path::new("<builtin ade20k_remap.txt>")).expect("shipped remap is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text, path)
    }

    pub fn parse_str(text: &str, origin: &Path) -> Result<Self> {
        let mut table = [SemanticLabel::Unknown.code(); 256];
        let mut seen = [false; 256];
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |m: &str| Error::parse(origin, idx + 1, m.to_string());
            let (from, to) = line.split_once('=').ok_or_else(|| bad("expected '<class_id> = <label_id>'"))?;
            let from: u8 = from.trim().parse().map_err(|_| bad("class id must be 0-255"))?;
            let to: u8 = to.trim().parse().map_err(|_| bad("bad label id"))?;
            if to as usize >= LABEL_COUNT {
                return Err(bad(&format!("label id {to} is not in 0-8")));
            }
            if std::mem::replace(&mut seen[from as usize], true) {
                return Err(bad(&format!("duplicate class id {from}")));
            }
            table[from as usize] = to;
        }
        Ok(Self { table })
    }

    pub fn apply(&self, class_id: u8) -> u8 {
        self.table[class_id as usize]
    }
}

fn read_gray(path: &Path) -> Result<Gray8> {
    match LabelMapFormat::from_path(path)? {
        LabelMapFormat::Png => imageio::read_png_gray8(path),
        LabelMapFormat::Pgm => imageio::read_pgm8(path),
    }
}

/// Loads a hard label map as a one-hot 9-label field.
pub fn load_label_map(path: impl AsRef<Path>, dims: (u32, u32), remap: Option<&LabelRemap>) -> Result<LabelField> {
    let path = path.as_ref();
    let mut img = read_gray(path)?;
    if (img.width, img.height) != dims {
        return Err(Error::Dimension(format!(
            "{}: label map is {}x{}, expected {}x{}",
            path.display(),
            img.width,
            img.height,
            dims.0,
            dims.1
        )));
    }
    if let Some(remap) = remap {
        img.data.iter_mut().for_each(|v| *v = remap.apply(*v));
    }
    LabelField::from_hard_labels(img.width, img.height, &img.data, LABEL_COUNT)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_label_map(path: impl AsRef<Path>, width: u32, height: u32, ids: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if ids.len() != width as usize * height as usize {
        return Err(Error::Dimension(format!("{} ids for {width}x{height}", ids.len())));
    }
    let img = Gray8 { width, height, data: ids.to_vec() };
    match LabelMapFormat::from_path(path)? {
        LabelMapFormat::Png => imageio::write_png_gray8(path, &img),
        LabelMapFormat::Pgm => imageio::write_pgm8_ascii(path, &img),
    }
}

pub fn write_prob_tensor(field: &LabelField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(20 + field.probs.len() * 4);
    let io = |e| Error::io(path, e);
    buf.write_all(PROB_MAGIC).map_err(io)?;
    buf.write_u32::<LittleEndian>(field.width).map_err(io)?;
    buf.write_u32::<LittleEndian>(field.height).map_err(io)?;
    buf.write_u32::<LittleEndian>(field.num_labels as u32).map_err(io)?;
    for &p in &field.probs {
        buf.write_f32::<LittleEndian>(p as f32).map_err(io)?;
    }
    std::fs::write(path, buf).map_err(io)
}

pub fn read_prob_tensor(path: impl AsRef<Path>) -> Result<LabelField> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..8] != PROB_MAGIC {
        return Err(Error::format(path, "not a probability tensor file"));
    }
    let width = LittleEndian::read_u32(&bytes[8..]);
    let height = LittleEndian::read_u32(&bytes[12..]);
    let num_labels = LittleEndian::read_u32(&bytes[16..]) as usize;
    let n = width as usize * height as usize * num_labels;
    let body = &bytes[20..];
    if body.len() != n * 4 {
        return Err(Error::format(path, "tensor body size does not match header"));
    }
    let probs = body.chunks_exact(4).map(|c| LittleEndian::read_f32(c) as f64).collect();
    Ok(LabelField { width, height, num_labels, probs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_wall_map() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.pgm");
        save_label_map(&p, 4, 3, &[0; 12]).unwrap();
        let f = load_label_map(&p, (4, 3), None).unwrap();
        assert!((0..12).all(|i| f.pixel(i)[0] == 1.0 && f.argmax(i) == 0));
    }

    #[test]
    fn closed_label_set() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        save_label_map(&p, 2, 1, &[0, 12]).unwrap();
        assert!(load_label_map(&p, (2, 1), None).is_err());
        assert!(matches!(load_label_map(&p, (3, 1), None), Err(Error::Dimension(_))));
    }

    #[test]
    fn ade20k_remap_lands_in_label_set() {
        let remap = LabelRemap::ade20k();
        assert_eq!(remap.apply(0), SemanticLabel::Wall.code());
        assert_eq!(remap.apply(3), SemanticLabel::Floor.code());
        assert_eq!(remap.apply(19), SemanticLabel::Chair.code());
        assert_eq!(remap.apply(2), SemanticLabel::Unknown.code()); // sky

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ade.png");
        let ids: Vec<u8> = (0..150).collect();
        save_label_map(&p, 15, 10, &ids).unwrap();
        let f = load_label_map(&p, (15, 10), Some(&remap)).unwrap();
        let out = f.argmax_labels();
        assert!(out.iter().all(|&l| (l as usize) < LABEL_COUNT));
        // Every object label is reachable from some class.
        for l in SemanticLabel::ALL {
            assert!(out.contains(&l.code()), "{l} never produced");
        }
    }

    #[test]
    fn remap_rejects_bad_entries() {
        assert!(LabelRemap::parse_str("3 = 9\n", Path::new("t")).is_err());
        assert!(LabelRemap::parse_str("3 = 1\n3 = 2\n", Path::new("t")).is_err());
    }

    #[test]
    fn prob_tensor_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.bin");
        let f = LabelField { width: 2, height: 1, num_labels: 3, probs: vec![0.5, 0.25, 0.25, 0.0, 1.0, 0.0] };
        write_prob_tensor(&f, &p).unwrap();
        assert_eq!(read_prob_tensor(&p).unwrap(), f);
    }
}
