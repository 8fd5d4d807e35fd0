//! PLY reader/writer for colored vertex clouds.
//!
//! Reads ASCII, binary little- and big-endian files with any scalar vertex
//! properties; other elements are skipped. Writes `float x y z` plus
//! `uchar red green blue`. Frame metadata lives in header comments:
//!
//! ```text
//! comment timestamp <seconds>
//! comment pose <tx> <ty> <tz> <qx> <qy> <qz> <qw>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};

use super::{Point, PointCloudFrame, Pose};
use crate::{Error, Result, Rgb};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlyCloud {
    pub positions: Vec<[f64; 3]>,
    pub colors: Option<Vec<Rgb>>,
    pub comments: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug, Clone)]
enum PropKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropKind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Body {
    Ascii,
    Binary { big_endian: bool },
}

struct Header {
    body: Body,
    elements: Vec<Element>,
    comments: Vec<String>,
    /// Byte offset of the first body byte.
    body_start: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let mut offset = 0;
    let mut line_no = 0;
    let next_line = |offset: &mut usize| -> Option<String> {
        if *offset >= bytes.len() {
            return None;
        }
        let rest = &bytes[*offset..];
        let end = rest.iter().position(|&b| b == b'\n').unwrap_or(rest.len());
        *offset += (end + 1).min(rest.len());
        Some(String::from_utf8_lossy(&rest[..end]).trim_end_matches('\r').to_string())
    };

    line_no += 1;
    if next_line(&mut offset).as_deref().map(str::trim) != Some("ply") {
        return Err(Error::parse(path, line_no, "missing 'ply' magic"));
    }
    let mut body = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut comments = Vec::new();
    loop {
        line_no += 1;
        let line = next_line(&mut offset).ok_or_else(|| Error::parse(path, line_no, "header ends before end_header"))?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                body = Some(match tok.next() {
                    Some("ascii") => Body::Ascii,
                    Some("binary_little_endian") => Body::Binary { big_endian: false },
                    Some("binary_big_endian") => Body::Binary { big_endian: true },
                    other => return Err(Error::parse(path, line_no, format!("unsupported format {other:?}"))),
                });
            }
            Some("comment") => {
                let text = line.trim_start().strip_prefix("comment").unwrap_or("").trim();
                comments.push(text.to_string());
            }
            Some("obj_info") => {}
            Some("element") => {
                let name = tok.next().ok_or_else(|| Error::parse(path, line_no, "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::parse(path, line_no, "element without valid count"))?;
                elements.push(Element { name: name.to_string(), count, props: Vec::new() });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, line_no, "property before any element"))?;
                let ty = tok.next().unwrap_or("");
                let kind = if ty == "list" {
                    let count = tok.next().and_then(Scalar::parse);
                    let item = tok.next().and_then(Scalar::parse);
                    match (count, item) {
                        (Some(count), Some(item)) if count.is_integer() => PropKind::List { count, item },
                        _ => return Err(Error::parse(path, line_no, "bad list property")),
                    }
                } else {
                    PropKind::Scalar(
                        Scalar::parse(ty)
                            .ok_or_else(|| Error::parse(path, line_no, format!("unknown property type '{ty}'")))?,
                    )
                };
                let name = tok.next().ok_or_else(|| Error::parse(path, line_no, "property without name"))?;
                el.props.push(Property { name: name.to_string(), kind });
            }
            Some("end_header") => break,
            None => {}
            Some(other) => return Err(Error::parse(path, line_no, format!("unexpected header keyword '{other}'"))),
        }
    }
    let body = body.ok_or_else(|| Error::parse(path, line_no, "missing format line"))?;
    Ok(Header { body, elements, comments, body_start: offset })
}

/// Source of property values for either body encoding.
trait ValueSource {
    fn scalar(&mut self, ty: Scalar) -> Result<f64>;
}

struct BinarySource<'a> {
    bytes: &'a [u8],
    pos: usize,
    big_endian: bool,
    path: &'a Path,
}

impl ValueSource for BinarySource<'_> {
    fn scalar(&mut self, ty: Scalar) -> Result<f64> {
        let n = ty.size();
        let b = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::format(self.path, "binary body shorter than header declares"))?;
        self.pos += n;
        macro_rules! rd {
            ($f:ident) => {
                if self.big_endian {
                    BigEndian::$f(b)
                } else {
                    LittleEndian::$f(b)
                }
            };
        }
        Ok(match ty {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => rd!(read_i16) as f64,
            Scalar::U16 => rd!(read_u16) as f64,
            Scalar::I32 => rd!(read_i32) as f64,
            Scalar::U32 => rd!(read_u32) as f64,
            Scalar::F32 => rd!(read_f32) as f64,
            Scalar::F64 => rd!(read_f64),
        })
    }
}

struct AsciiSource<'a, I: Iterator<Item = &'a str>> {
    tokens: I,
    path: &'a Path,
}

impl<'a, I: Iterator<Item = &'a str>> ValueSource for AsciiSource<'a, I> {
    fn scalar(&mut self, ty: Scalar) -> Result<f64> {
        let t = self.tokens.next().ok_or_else(|| Error::format(self.path, "ASCII body ends early"))?;
        let bad = || Error::format(self.path, format!("bad ASCII value '{t}'"));
        Ok(match ty {
            // Parsing through f32 keeps ASCII and binary twins bit-identical.
            Scalar::F32 => t.parse::<f32>().map_err(|_| bad())? as f64,
            Scalar::F64 => t.parse::<f64>().map_err(|_| bad())?,
            _ => t.parse::<i64>().map_err(|_| bad())? as f64,
        })
    }
}

fn read_elements(header: &Header, src: &mut dyn ValueSource, path: &Path) -> Result<PlyCloud> {
    let mut positions = Vec::new();
    let mut colors = None;
    let mut seen_vertex = false;
    for el in &header.elements {
        if el.name != "vertex" || seen_vertex {
            for _ in 0..el.count {
                for p in &el.props {
                    skip_property(src, &p.kind)?;
                }
            }
            continue;
        }
        seen_vertex = true;
        let find = |names: &[&str]| el.props.iter().position(|p| names.contains(&p.name.as_str()));
        let xyz = [find(&["x"]), find(&["y"]), find(&["z"])];
        let [Some(ix), Some(iy), Some(iz)] = xyz else {
            return Err(Error::format(path, "vertex element lacks x/y/z"));
        };
        let rgb = match (find(&["red", "r"]), find(&["green", "g"]), find(&["blue", "b"])) {
            (Some(r), Some(g), Some(b)) => Some([r, g, b]),
            _ => None,
        };
        positions.reserve(el.count);
        let mut cols = rgb.map(|_| Vec::with_capacity(el.count));
        let mut values = vec![0.0; el.props.len()];
        for _ in 0..el.count {
            for (v, p) in values.iter_mut().zip(&el.props) {
                *v = match p.kind {
                    PropKind::Scalar(ty) => src.scalar(ty)?,
                    ref list => {
                        skip_property(src, list)?;
                        0.0
                    }
                };
            }
            positions.push([values[ix], values[iy], values[iz]]);
            if let (Some(cols), Some(idx)) = (cols.as_mut(), rgb) {
                let mut c = [0u8; 3];
                for (dst, &i) in c.iter_mut().zip(&idx) {
                    let v = values[i];
                    if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                        return Err(Error::format(path, format!("color value {v} is not a byte")));
                    }
                    *dst = v as u8;
                }
                cols.push(c);
            }
        }
        colors = cols;
    }
    if !seen_vertex {
        return Err(Error::format(path, "no vertex element"));
    }
    Ok(PlyCloud { positions, colors, comments: header.comments.clone() })
}

fn skip_property(src: &mut dyn ValueSource, kind: &PropKind) -> Result<()> {
    match *kind {
        PropKind::Scalar(ty) => {
            src.scalar(ty)?;
        }
        PropKind::List { count, item } => {
            let n = src.scalar(count)? as usize;
            for _ in 0..n {
                src.scalar(item)?;
            }
        }
    }
    Ok(())
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PlyCloud> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = parse_header(&bytes, path)?;
    let body = &bytes[header.body_start..];
    match header.body {
        Body::Binary { big_endian } => {
            let mut src = BinarySource { bytes: body, pos: 0, big_endian, path };
            read_elements(&header, &mut src, path)
        }
        Body::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| Error::format(path, "ASCII body is not UTF-8"))?;
            let mut src = AsciiSource { tokens: text.split_whitespace(), path };
            read_elements(&header, &mut src, path)
        }
    }
}

pub(crate) fn read_header_comments(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut comments = Vec::new();
    for line in BufReader::new(file).split(b'\n') {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = String::from_utf8_lossy(&line);
        let line = line.trim();
        if line == "end_header" {
            return Ok(comments);
        }
        if let Some(c) = line.strip_prefix("comment") {
            comments.push(c.trim().to_string());
        }
    }
    Err(Error::format(path, "header ends before end_header"))
}

pub(crate) fn frame_comments(frame: &PointCloudFrame) -> Vec<String> {
    let t = frame.pose.translation;
    let [qx, qy, qz, qw] = frame.pose.quaternion_xyzw();
    vec![
        format!("timestamp {}", frame.timestamp),
        format!("pose {} {} {} {qx} {qy} {qz} {qw}", t.x, t.y, t.z),
    ]
}

pub(crate) fn comment_timestamp(comments: &[String], path: &Path) -> Result<Option<f64>> {
    for c in comments {
        if let Some(v) = c.strip_prefix("timestamp") {
            let ts = v.trim().parse::<f64>().map_err(|_| Error::format(path, format!("bad timestamp '{v}'")))?;
            return Ok(Some(ts));
        }
    }
    Ok(None)
}

pub(crate) fn comment_pose(comments: &[String], path: &Path) -> Result<Option<Pose>> {
    for c in comments {
        if let Some(v) = c.strip_prefix("pose ") {
            let nums: Vec<f64> = v
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::format(path, format!("bad pose comment '{c}'")))?;
            let [tx, ty, tz, qx, qy, qz, qw] = nums[..] else {
                return Err(Error::format(path, "pose comment needs 7 numbers"));
            };
            return Pose::from_parts([tx, ty, tz], [qx, qy, qz, qw]).map(Some);
        }
    }
    Ok(None)
}

/// Writes points as a PLY vertex cloud. Coordinates are stored as float32.
pub fn write_ply(path: impl AsRef<Path>, points: &[Point], comments: &[String], encoding: PlyEncoding) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ply_to(&mut w, points, comments, encoding)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_ply_to<W: Write>(
    w: &mut W,
    points: &[Point],
    comments: &[String],
    encoding: PlyEncoding,
) -> std::io::Result<()> {
    let fmt = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply\nformat {fmt} 1.0")?;
    for c in comments {
        writeln!(w, "comment {c}")?;
    }
    writeln!(w, "element vertex {}", points.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property float {axis}")?;
    }
    for ch in ["red", "green", "blue"] {
        writeln!(w, "property uchar {ch}")?;
    }
    writeln!(w, "end_header")?;
    for p in points {
        let [x, y, z] = [p.position.x as f32, p.position.y as f32, p.position.z as f32];
        let [r, g, b] = p.color;
        match encoding {
            PlyEncoding::Ascii => writeln!(w, "{x} {y} {z} {r} {g} {b}")?,
            PlyEncoding::BinaryLittleEndian => {
                w.write_f32::<LittleEndian>(x)?;
                w.write_f32::<LittleEndian>(y)?;
                w.write_f32::<LittleEndian>(z)?;
                w.write_all(&p.color)?;
            }
        }
    }
    Ok(())
}
