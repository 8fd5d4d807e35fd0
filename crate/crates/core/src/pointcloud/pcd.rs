//! PCD v0.7 (ascii and binary) reader/writer.
//!
//! Color is the PCL packed `rgb` field (`0x00RRGGBB`, stored as the bit
//! pattern of a float) or `rgba` stored as an unsigned integer. The frame
//! timestamp is carried in a `# timestamp <seconds>` comment line and the
//! pose in `VIEWPOINT tx ty tz qw qx qy qz`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

use super::{Point, PointCloudFrame, Pose, RawFrame};
use crate::{Error, Result, Rgb};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcdEncoding {
    Ascii,
    Binary,
}

#[derive(Debug, Clone)]
struct Field {
    name: String,
    size: usize,
    ty: char,
    count: usize,
}

struct Header {
    fields: Vec<Field>,
    points: usize,
    viewpoint: Option<Pose>,
    timestamp: Option<f64>,
    binary: bool,
    body_start: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let mut names: Vec<String> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    let mut types: Vec<char> = Vec::new();
    let mut counts: Option<Vec<usize>> = None;
    let (mut width, mut height, mut points) = (None, 1usize, None);
    let mut viewpoint = None;
    let mut timestamp = None;
    let mut offset = 0;
    let mut line_no = 0;

    while offset < bytes.len() {
        let rest = &bytes[offset..];
        let end = rest.iter().position(|&b| b == b'\n').unwrap_or(rest.len());
        offset += (end + 1).min(rest.len());
        line_no += 1;
        let line = String::from_utf8_lossy(&rest[..end]).trim().to_string();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("timestamp") {
                timestamp = Some(
                    v.trim().parse::<f64>().map_err(|_| Error::parse(path, line_no, format!("bad timestamp '{v}'")))?,
                );
            }
            continue;
        }
        let mut tok = line.split_whitespace();
        let key = tok.next().unwrap_or_default().to_ascii_uppercase();
        let vals: Vec<&str> = tok.collect();
        let nums = |what: &str| -> Result<Vec<usize>> {
            vals.iter()
                .map(|v| v.parse::<usize>().map_err(|_| Error::parse(path, line_no, format!("bad {what} '{v}'"))))
                .collect()
        };
        match key.as_str() {
            "VERSION" => {}
            "FIELDS" => names = vals.iter().map(|s| s.to_string()).collect(),
            "SIZE" => sizes = nums("SIZE")?,
            "TYPE" => {
                types = vals
                    .iter()
                    .map(|v| match *v {
                        "F" | "I" | "U" => Ok(v.chars().next().unwrap_or('F')),
                        _ => Err(Error::parse(path, line_no, format!("bad TYPE '{v}'"))),
                    })
                    .collect::<Result<_>>()?
            }
            "COUNT" => counts = Some(nums("COUNT")?),
            "WIDTH" => width = nums("WIDTH")?.first().copied(),
            "HEIGHT" => height = nums("HEIGHT")?.first().copied().unwrap_or(1),
            "POINTS" => points = nums("POINTS")?.first().copied(),
            "VIEWPOINT" => {
                let v: Vec<f64> = vals
                    .iter()
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::parse(path, line_no, "bad VIEWPOINT"))?;
                let [tx, ty, tz, qw, qx, qy, qz] = v[..] else {
                    return Err(Error::parse(path, line_no, "VIEWPOINT needs 7 numbers"));
                };
                viewpoint = Some(
                    Pose::from_parts([tx, ty, tz], [qx, qy, qz, qw])
                        .map_err(|e| Error::parse(path, line_no, e.to_string()))?,
                );
            }
            "DATA" => {
                let binary = match vals.first().copied() {
                    Some("ascii") => false,
                    Some("binary") => true,
                    other => return Err(Error::parse(path, line_no, format!("unsupported DATA {other:?}"))),
                };
                let n = names.len();
                let counts = counts.take().unwrap_or_else(|| vec![1; n]);
                if sizes.len() != n || types.len() != n || counts.len() != n {
                    return Err(Error::parse(path, line_no, "FIELDS/SIZE/TYPE/COUNT lengths differ"));
                }
                let fields = (0..n)
                    .map(|i| Field { name: names[i].clone(), size: sizes[i], ty: types[i], count: counts[i] })
                    .collect::<Vec<_>>();
                if let Some(f) = fields.iter().find(|f| !matches!((f.ty, f.size), ('F', 4 | 8) | ('I' | 'U', 1 | 2 | 4 | 8)))
                {
                    return Err(Error::parse(path, line_no, format!("unsupported field {} {}{}", f.name, f.ty, f.size)));
                }
                let points = points.or(width.map(|w| w * height)).unwrap_or(0);
                return Ok(Header { fields, points, viewpoint, timestamp, binary, body_start: offset });
            }
            other => return Err(Error::parse(path, line_no, format!("unknown header key '{other}'"))),
        }
    }
    Err(Error::format(path, "header has no DATA line"))
}

fn decode_binary(bytes: &[u8], ty: char) -> f64 {
    match (ty, bytes.len()) {
        ('F', 4) => LittleEndian::read_f32(bytes) as f64,
        ('F', _) => LittleEndian::read_f64(bytes),
        ('U', 1) => bytes[0] as f64,
        ('I', 1) => bytes[0] as i8 as f64,
        ('U', 2) => LittleEndian::read_u16(bytes) as f64,
        ('I', 2) => LittleEndian::read_i16(bytes) as f64,
        ('U', 4) => LittleEndian::read_u32(bytes) as f64,
        ('I', 4) => LittleEndian::read_i32(bytes) as f64,
        ('U', _) => LittleEndian::read_u64(bytes) as f64,
        _ => LittleEndian::read_i64(bytes) as f64,
    }
}

fn unpack_rgb(bits: u32) -> Rgb {
    [(bits >> 16) as u8, (bits >> 8) as u8, bits as u8]
}

fn pack_rgb([r, g, b]: Rgb) -> u32 {
    ((r as u32) << 16) | ((g as u32) << 8) | b as u32
}

pub fn read_pcd(path: impl AsRef<Path>) -> Result<RawFrame> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let h = parse_header(&bytes, path)?;

    // Offset (in scalar slots) of each field's first element.
    let mut slot = Vec::with_capacity(h.fields.len());
    let mut byte_off = Vec::with_capacity(h.fields.len());
    let (mut s, mut b) = (0, 0);
    for f in &h.fields {
        slot.push(s);
        byte_off.push(b);
        s += f.count;
        b += f.size * f.count;
    }
    let record = b;
    let find = |n: &str| h.fields.iter().position(|f| f.name == n);
    let (Some(ix), Some(iy), Some(iz)) = (find("x"), find("y"), find("z")) else {
        return Err(Error::format(path, "PCD lacks x/y/z fields"));
    };
    let color = find("rgb").or_else(|| find("rgba"));

    let mut positions = Vec::with_capacity(h.points);
    let mut colors = color.map(|_| Vec::with_capacity(h.points));
    let body = &bytes[h.body_start..];
    if h.binary {
        if body.len() < record * h.points {
            return Err(Error::format(path, "binary body shorter than header declares"));
        }
        for rec in body.chunks_exact(record).take(h.points) {
            let val = |i: usize| {
                let f = &h.fields[i];
                decode_binary(&rec[byte_off[i]..byte_off[i] + f.size], f.ty)
            };
            positions.push([val(ix), val(iy), val(iz)]);
            if let (Some(cols), Some(ci)) = (colors.as_mut(), color) {
                let raw = &rec[byte_off[ci]..byte_off[ci] + 4];
                cols.push(unpack_rgb(LittleEndian::read_u32(raw)));
            }
        }
    } else {
        let text = std::str::from_utf8(body).map_err(|_| Error::format(path, "ASCII body is not UTF-8"))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        for n in 0..h.points {
            let line = lines.next().ok_or_else(|| Error::format(path, format!("ASCII body ends at point {n}")))?;
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() != s {
                return Err(Error::format(path, format!("point {n}: expected {s} values, found {}", tok.len())));
            }
            let num = |i: usize| -> Result<f64> {
                let t = tok[slot[i]];
                let f = &h.fields[i];
                let bad = || Error::format(path, format!("point {n}: bad value '{t}'"));
                match (f.ty, f.size) {
                    ('F', 4) => t.parse::<f32>().map(f64::from).map_err(|_| bad()),
                    ('F', _) => t.parse::<f64>().map_err(|_| bad()),
                    _ => t.parse::<i64>().map(|v| v as f64).map_err(|_| bad()),
                }
            };
            positions.push([num(ix)?, num(iy)?, num(iz)?]);
            if let (Some(cols), Some(ci)) = (colors.as_mut(), color) {
                let t = tok[slot[ci]];
                let bits = if h.fields[ci].ty == 'F' {
                    t.parse::<f32>().map(f32::to_bits)
                        .map_err(|_| Error::format(path, format!("point {n}: bad rgb '{t}'")))?
                } else {
                    t.parse::<u32>().map_err(|_| Error::format(path, format!("point {n}: bad rgba '{t}'")))?
                };
                cols.push(unpack_rgb(bits));
            }
        }
    }
    Ok(RawFrame { positions, colors, timestamp: h.timestamp, pose: h.viewpoint })
}

pub(crate) fn read_header_timestamp(path: &Path) -> Result<Option<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for line in BufReader::new(file).split(b'\n') {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = String::from_utf8_lossy(&line);
        let line = line.trim();
        if line.starts_with("DATA") {
            break;
        }
        if let Some(v) = line.strip_prefix('#').and_then(|c| c.trim().strip_prefix("timestamp")) {
            return v.trim().parse().map(Some).map_err(|_| Error::format(path, format!("bad timestamp '{v}'")));
        }
    }
    Ok(None)
}

pub fn write_pcd(path: impl AsRef<Path>, frame: &PointCloudFrame, encoding: PcdEncoding) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_pcd_to(&mut w, frame, encoding).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_pcd_to<W: Write>(w: &mut W, frame: &PointCloudFrame, encoding: PcdEncoding) -> std::io::Result<()> {
    let n = frame.points.len();
    let t = frame.pose.translation;
    let [qx, qy, qz, qw] = frame.pose.quaternion_xyzw();
    writeln!(w, "# .PCD v0.7 - Point Cloud Data file format")?;
    writeln!(w, "# timestamp {}", frame.timestamp)?;
    writeln!(w, "VERSION 0.7\nFIELDS x y z rgb\nSIZE 4 4 4 4\nTYPE F F F F\nCOUNT 1 1 1 1")?;
    writeln!(w, "WIDTH {n}\nHEIGHT 1")?;
    writeln!(w, "VIEWPOINT {} {} {} {qw} {qx} {qy} {qz}", t.x, t.y, t.z)?;
    writeln!(w, "POINTS {n}")?;
    match encoding {
        PcdEncoding::Ascii => {
            writeln!(w, "DATA ascii")?;
            for Point { position: p, color } in &frame.points {
                let rgb = f32::from_bits(pack_rgb(*color));
                writeln!(w, "{} {} {} {rgb:e}", p.x as f32, p.y as f32, p.z as f32)?;
            }
        }
        PcdEncoding::Binary => {
            writeln!(w, "DATA binary")?;
            for Point { position: p, color } in &frame.points {
                w.write_f32::<LittleEndian>(p.x as f32)?;
                w.write_f32::<LittleEndian>(p.y as f32)?;
                w.write_f32::<LittleEndian>(p.z as f32)?;
                w.write_u32::<LittleEndian>(pack_rgb(*color))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcl_style_ascii_with_float_rgb() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pcd");
        // PCL writes packed rgb as the float sharing its bit pattern.
        let rgb = f32::from_bits(0x00ff8000);
        std::fs::write(
            &p,
            format!(
                "# .PCD v0.7\nVERSION 0.7\nFIELDS x y z rgb\nSIZE 4 4 4 4\nTYPE F F F F\nCOUNT 1 1 1 1\n\
                 WIDTH 1\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS 1\nDATA ascii\n0.5 -0.25 2 {rgb:e}\n"
            ),
        )
        .unwrap();
        let raw = read_pcd(&p).unwrap();
        assert_eq!(raw.positions, vec![[0.5, -0.25, 2.0]]);
        assert_eq!(raw.colors.unwrap(), vec![[255, 128, 0]]);
        assert_eq!(raw.pose, Some(Pose::identity()));
        assert_eq!(raw.timestamp, None);
    }

    #[test]
    fn compressed_data_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pcd");
        std::fs::write(&p, "VERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nPOINTS 0\nDATA binary_compressed\n")
            .unwrap();
        assert!(matches!(read_pcd(&p), Err(Error::Parse { line: 6, .. })));
    }
}
