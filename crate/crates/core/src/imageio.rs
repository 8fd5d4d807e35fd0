//! Minimal raster I/O: 8-bit PNG through the `png` crate, PGM by hand.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::{Error, Result, Rgb};

/// 8-bit single-channel raster. For indexed PNGs the values are palette
/// indices, not colors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray8 {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::format(path, format!("PNG: {e}"))
}

/// Reads an 8-bit grayscale or palette PNG, returning raw sample values.
pub fn read_png_gray8(path: &Path) -> Result<Gray8> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| png_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    if info.bit_depth != png::BitDepth::Eight
        || !matches!(info.color_type, png::ColorType::Grayscale | png::ColorType::Indexed)
    {
        return Err(png_err(path, format!("expected 8-bit gray or indexed, found {:?} {:?}", info.color_type, info.bit_depth)));
    }
    let (w, h) = (info.width, info.height);
    let data = buf
        .chunks(info.line_size)
        .take(h as usize)
        .flat_map(|row| row[..w as usize].iter().copied())
        .collect();
    Ok(Gray8 { width: w, height: h, data })
}

/// Reads any 8-bit PNG as RGB (palette and gray expanded, alpha dropped).
pub fn read_png_rgb(path: &Path) -> Result<(u32, u32, Vec<Rgb>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| png_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    let channels = info.color_type.samples();
    let (w, h) = (info.width as usize, info.height as usize);
    let mut out = Vec::with_capacity(w * h);
    for row in buf.chunks(info.line_size).take(h) {
        for px in row[..w * channels].chunks_exact(channels) {
            out.push(match channels {
                1 | 2 => [px[0]; 3],
                _ => [px[0], px[1], px[2]],
            });
        }
    }
    Ok((info.width, info.height, out))
}

fn write_png(path: &Path, width: u32, height: u32, color: png::ColorType, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width, height);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| png_err(path, e))?;
    writer.write_image_data(data).map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))
}

pub fn write_png_rgb(path: &Path, width: u32, height: u32, pixels: &[Rgb]) -> Result<()> {
    write_png(path, width, height, png::ColorType::Rgb, pixels.as_flattened())
}

pub fn write_png_gray8(path: &Path, img: &Gray8) -> Result<()> {
    write_png(path, img.width, img.height, png::ColorType::Grayscale, &img.data)
}

/// Reads P2 (ASCII) or P5 (binary) PGM with maxval ≤ 255.
pub fn read_pgm8(path: &Path) -> Result<Gray8> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let token = |pos: &mut usize| -> Option<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos).unwrap_or_default();
    let mut num = |what: &str| -> Result<u32> {
        token(&mut pos)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::format(path, format!("PGM: bad {what}")))
    };
    let (width, height, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(path, format!("PGM: maxval {maxval} unsupported")));
    }
    let n = width as usize * height as usize;
    let data = match magic.as_str() {
        "P5" => {
            let start = pos + 1;
            bytes
                .get(start..start + n)
                .ok_or_else(|| Error::format(path, "PGM: body too short"))?
                .to_vec()
        }
        "P2" => {
            let text = String::from_utf8_lossy(&bytes[pos..]);
            let vals: Vec<u8> = text
                .split_whitespace()
                .take(n)
                .map(|t| t.parse::<u8>().map_err(|_| Error::format(path, format!("PGM: bad sample '{t}'"))))
                .collect::<Result<_>>()?;
            if vals.len() != n {
                return Err(Error::format(path, "PGM: body too short"));
            }
            vals
        }
        other => return Err(Error::format(path, format!("PGM: unsupported magic '{other}'"))),
    };
    Ok(Gray8 { width, height, data })
}

pub fn write_pgm8_ascii(path: &Path, img: &Gray8) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let body = (|| -> std::io::Result<()> {
        writeln!(w, "P2\n{} {}\n255", img.width, img.height)?;
        for row in img.data.chunks(img.width.max(1) as usize) {
            let line: Vec<String> = row.iter().map(u8::to_string).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        w.flush()
    })();
    body.map_err(|e| Error::io(path, e))
}

/// Binary 16-bit PGM (big-endian samples, maxval 65535).
pub fn write_pgm16(path: &Path, width: u32, height: u32, data: &[u16]) -> Result<()> {
    let mut bytes = format!("P5\n{width} {height}\n65535\n").into_bytes();
    bytes.reserve(data.len() * 2);
    for v in data {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_png_and_pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Gray8 { width: 3, height: 2, data: vec![0, 1, 2, 8, 7, 6] };
        let png = dir.path().join("a.png");
        write_png_gray8(&png, &img).unwrap();
        assert_eq!(read_png_gray8(&png).unwrap(), img);
        let pgm = dir.path().join("a.pgm");
        write_pgm8_ascii(&pgm, &img).unwrap();
        assert_eq!(read_pgm8(&pgm).unwrap(), img);
        std::fs::write(&pgm, b"P5\n# c\n3 2\n255\n\x00\x01\x02\x08\x07\x06").unwrap();
        assert_eq!(read_pgm8(&pgm).unwrap(), img);
    }

    #[test]
    fn rgb_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let px = vec![[1, 2, 3], [250, 128, 0]];
        let p = dir.path().join("c.png");
        write_png_rgb(&p, 2, 1, &px).unwrap();
        assert_eq!(read_png_rgb(&p).unwrap(), (2, 1, px));
    }
}
