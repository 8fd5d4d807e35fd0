//! Image reconstruction from a sensor-frame point cloud.
//!
//! Each point is mapped onto an image plane at focal distance `F` with
//!
//! ```text
//! X' = (X - Xc) * (F / Z) + Xc
//! Y' = (Y - Yc) * (F / Z) + Yc
//! ```
//!
//! where all quantities are in pixel units. Metric sensor coordinates enter
//! the plane as `X = s*x + Xc`, `Y = s*y + Yc`, `Z = s*z` with `s` pixels per
//! meter, so the optical axis passes through the principal point. Pixels are
//! `round(X')`, `round(Y')` with halves rounded away from zero; collisions
//! keep the nearest point.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::exec::{self, Exec};
use crate::imageio;
use crate::material_db::{SemanticLabel, LABEL_COUNT};
use crate::pointcloud::PointCloudFrame;
use crate::segmentation::LabelField;
use crate::{Error, Result, Rgb};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraModel {
    pub focal_px: f64,
    pub width: u32,
    pub height: u32,
    pub cx: f64,
    pub cy: f64,
    pub pixels_per_meter: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self { focal_px: 525.0, width: 640, height: 480, cx: 319.5, cy: 239.5, pixels_per_meter: 1000.0 }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal_px > 0.0 && self.focal_px.is_finite()) {
            return Err(Error::validation("camera.focal_px", "must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::validation("camera.width/height", "must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::validation("camera principal point", "must lie inside the image"));
        }
        if !(self.pixels_per_meter > 0.0 && self.pixels_per_meter.is_finite()) {
            return Err(Error::validation("camera.pixels_per_meter", "must be positive"));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Perspective mapping on plane coordinates already in pixel units.
    pub fn perspective(&self, x: f64, y: f64, z: f64) -> (f64, f64) {
        let k = self.focal_px / z;
        ((x - self.cx) * k + self.cx, (y - self.cy) * k + self.cy)
    }

    /// Metric sensor coordinates to image-plane pixel units.
    pub fn to_plane(&self, x: f64, y: f64, z: f64) -> (f64, f64, f64) {
        let s = self.pixels_per_meter;
        (s * x + self.cx, s * y + self.cy, s * z)
    }

    /// Projected (sub-pixel) image position of a metric sensor-frame point.
    pub fn project(&self, x: f64, y: f64, z: f64) -> (f64, f64) {
        let (px, py, pz) = self.to_plane(x, y, z);
        self.perspective(px, py, pz)
    }

    /// Row-major pixel index for a sub-pixel position, if inside the image.
    pub fn pixel_at(&self, u: f64, v: f64) -> Option<u32> {
        let (col, row) = (u.round(), v.round());
        if col >= 0.0 && row >= 0.0 && col < self.width as f64 && row < self.height as f64 {
            Some(row as u32 * self.width + col as u32)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedImage {
    pub width: u32,
    pub height: u32,
    pub color: Vec<Rgb>,
    /// Depth (sensor z, meters) of the point owning each pixel.
    pub depth: Vec<Option<f64>>,
    /// Index into the source frame of the point owning each pixel.
    pub point_index: Vec<Option<u32>>,
    pub hole: Vec<bool>,
    /// For each source point, the pixel it projected to (owned or occluded).
    pub point_pixel: Vec<Option<u32>>,
    /// Points whose projection fell outside the image.
    pub out_of_bounds: usize,
}

impl ReconstructedImage {
    pub fn len(&self) -> usize {
        self.color.len()
    }

    pub fn is_empty(&self) -> bool {
        self.color.is_empty()
    }

    pub fn hole_count(&self) -> usize {
        self.hole.iter().filter(|&&h| h).count()
    }

    pub fn write_color_png(&self, path: &Path) -> Result<()> {
        imageio::write_png_rgb(path, self.width, self.height, &self.color)
    }

    /// 16-bit PGM in millimeters; empty pixels are 0.
    pub fn write_depth_pgm(&self, path: &Path) -> Result<()> {
        let mm: Vec<u16> = self
            .depth
            .iter()
            .map(|d| d.map_or(0, |z| (z * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16))
            .collect();
        imageio::write_pgm16(path, self.width, self.height, &mm)
    }

    /// Row-major `u32` little-endian point index per pixel, `u32::MAX` for none.
    pub fn write_correspondence(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .point_index
            .iter()
            .flat_map(|i| i.unwrap_or(u32::MAX).to_le_bytes())
            .collect();
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// Projects every point of a sensor-frame cloud into a fresh image.
///
/// Points with `z <= 0` or projections outside the image are counted in
/// `out_of_bounds`. Equal depths keep the lower point index.
pub fn project_frame(frame: &PointCloudFrame, cam: &CameraModel, exec: Exec) -> ReconstructedImage {
    let n_px = cam.pixel_count();
    let pixels: Vec<Option<u32>> = exec::map_slice(exec, &frame.points, |p| {
        let q = p.position;
        if q.z > 0.0 {
            let (u, v) = cam.project(q.x, q.y, q.z);
            cam.pixel_at(u, v)
        } else {
            None
        }
    });

    let mut img = ReconstructedImage {
        width: cam.width,
        height: cam.height,
        color: vec![[0; 3]; n_px],
        depth: vec![None; n_px],
        point_index: vec![None; n_px],
        hole: vec![true; n_px],
        point_pixel: pixels,
        out_of_bounds: 0,
    };
    for (i, (px, p)) in img.point_pixel.iter().zip(&frame.points).enumerate() {
        let Some(px) = *px else {
            img.out_of_bounds += 1;
            continue;
        };
        let px = px as usize;
        let z = p.position.z;
        if img.depth[px].is_none_or(|d| z < d) {
            img.depth[px] = Some(z);
            img.color[px] = p.color;
            img.point_index[px] = Some(i as u32);
            img.hole[px] = false;
        }
    }
    img
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FillReport {
    pub iterations: usize,
    pub filled: usize,
    /// Holes still present after the last pass.
    pub remaining_holes: usize,
    /// Remaining holes that another pass would fill.
    pub remaining_fillable: usize,
}

/// Mean-filter hole filling.
///
/// Each pass gives every hole with at least one non-hole pixel in its
/// `kernel × kernel` window the rounded mean color of those pixels. All holes
/// in a pass are filled simultaneously from the previous pass's state.
/// Non-hole pixels are never modified and filled pixels keep
/// `point_index == None`.
pub fn fill_holes(
    img: &ReconstructedImage,
    kernel: usize,
    max_iters: usize,
    exec: Exec,
) -> Result<(ReconstructedImage, FillReport)> {
    if kernel < 3 || kernel % 2 == 0 {
        return Err(Error::validation("hole fill kernel", format!("{kernel} must be odd and >= 3")));
    }
    let mut out = img.clone();
    let mut report = FillReport::default();
    let (w, h) = (img.width as usize, img.height as usize);
    let r = (kernel / 2) as isize;
    loop {
        let updates = fill_pass(&out, w, h, r, exec);
        if updates.is_empty() || report.iterations == max_iters {
            report.remaining_fillable = updates.len();
            break;
        }
        report.iterations += 1;
        report.filled += updates.len();
        for (idx, c) in updates {
            out.color[idx] = c;
            out.hole[idx] = false;
        }
    }
    report.remaining_holes = out.hole_count();
    Ok((out, report))
}

fn fill_pass(img: &ReconstructedImage, w: usize, h: usize, r: isize, exec: Exec) -> Vec<(usize, Rgb)> {
    let rows = exec::map_range(exec, h, |y| {
        let mut found = Vec::new();
        for x in 0..w {
            let idx = y * w + x;
            if !img.hole[idx] {
                continue;
            }
            let mut sum = [0u32; 3];
            let mut n = 0u32;
            for yy in (y as isize - r).max(0)..=(y as isize + r).min(h as isize - 1) {
                for xx in (x as isize - r).max(0)..=(x as isize + r).min(w as isize - 1) {
                    let j = yy as usize * w + xx as usize;
                    if !img.hole[j] {
                        let c = img.color[j];
                        sum[0] += c[0] as u32;
                        sum[1] += c[1] as u32;
                        sum[2] += c[2] as u32;
                        n += 1;
                    }
                }
            }
            if n > 0 {
                found.push((idx, sum.map(|s| ((s + n / 2) / n) as u8)));
            }
        }
        found
    });
    rows.into_iter().flatten().collect()
}

/// Label of each source point: the argmax label of the pixel it projected
/// to (owned or occluded), `Unknown` when it fell outside the image.
pub fn backproject_labels(
    img: &ReconstructedImage,
    labels: &LabelField,
    frame: &PointCloudFrame,
) -> Result<Vec<SemanticLabel>> {
    if labels.width != img.width || labels.height != img.height {
        return Err(Error::Dimension(format!(
            "label field {}x{} vs image {}x{}",
            labels.width, labels.height, img.width, img.height
        )));
    }
    if labels.num_labels != LABEL_COUNT {
        return Err(Error::Dimension(format!("label field has {} labels, expected {LABEL_COUNT}", labels.num_labels)));
    }
    if img.point_pixel.len() != frame.points.len() {
        return Err(Error::Dimension(format!(
            "image built from {} points, frame has {}",
            img.point_pixel.len(),
            frame.points.len()
        )));
    }
    Ok(img
        .point_pixel
        .iter()
        .map(|px| match px {
            Some(px) => SemanticLabel::from_code(labels.argmax(*px as usize) as u8).unwrap_or(SemanticLabel::Unknown),
            None => SemanticLabel::Unknown,
        })
        .collect())
}
