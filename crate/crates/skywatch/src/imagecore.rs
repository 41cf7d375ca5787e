//! Frames, patches, pyramids and spatial gradients.
//!
//! Conventions, fixed for the whole crate:
//! - Pixel grids are row-major `Vec<f64>` with intensities in [0, 1].
//! - Coordinates are `(row, col)` = `(i, j)`, sub-pixel allowed. A patch of
//!   size `(s_x, s_y)` centered at `(i, j)` samples source positions
//!   `i + r - (s_y - 1)/2`, `j + c - (s_x - 1)/2` for `r, c` over the patch.
//! - Sub-pixel sampling is bilinear; coordinates outside the frame clamp to
//!   the nearest border pixel (edge replication).
//! - Gradients are central differences in the interior, one-sided at borders;
//!   orientations are unsigned, in [0, pi).

use crate::error::{Error, Result};
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// One grayscale video frame. `index` is its temporal position.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub index: usize,
    pub intensities: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, index: usize, intensities: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || intensities.len() != width * height {
            return Err(Error::invalid(format!(
                "frame buffer length {} does not match {}x{}",
                intensities.len(),
                width,
                height
            )));
        }
        debug_assert!(intensities.iter().all(|v| (0.0..=1.0).contains(v)));
        Ok(Frame { width, height, index, intensities })
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.intensities[row * self.width + col]
    }

    /// Bilinear sample with edge replication.
    #[inline]
    pub fn sample(&self, row: f64, col: f64) -> f64 {
        bilinear(&self.intensities, self.width, self.height, row, col)
    }
}

/// A window extracted from a frame. `source_center` is the exact (possibly
/// sub-pixel) location used for extraction; `source_frame_index` its frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub width: usize,
    pub height: usize,
    pub intensities: Vec<f64>,
    pub source_center: (f64, f64),
    pub source_frame_index: usize,
}

impl Patch {
    pub fn from_raw(
        width: usize,
        height: usize,
        intensities: Vec<f64>,
        source_center: (f64, f64),
        source_frame_index: usize,
    ) -> Result<Self> {
        if width == 0 || height == 0 || intensities.len() != width * height {
            return Err(Error::invalid("patch buffer does not match its dimensions"));
        }
        Ok(Patch { width, height, intensities, source_center, source_frame_index })
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.intensities[row * self.width + col]
    }
}

/// Per-pixel derivatives of a patch.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    /// Horizontal derivative (d/dcol).
    pub gx: Vec<f64>,
    /// Vertical derivative (d/drow).
    pub gy: Vec<f64>,
    pub magnitude: Vec<f64>,
    /// Unsigned orientation in [0, pi); 0 where magnitude is 0.
    pub orientation: Vec<f64>,
}

#[inline]
fn bilinear(data: &[f64], width: usize, height: usize, row: f64, col: f64) -> f64 {
    let r = row.clamp(0.0, (height - 1) as f64);
    let c = col.clamp(0.0, (width - 1) as f64);
    let r0 = r.floor();
    let c0 = c.floor();
    let fr = r - r0;
    let fc = c - c0;
    let r0 = r0 as usize;
    let c0 = c0 as usize;
    let r1 = (r0 + 1).min(height - 1);
    let c1 = (c0 + 1).min(width - 1);
    let top = data[r0 * width + c0] * (1.0 - fc) + data[r0 * width + c1] * fc;
    let bot = data[r1 * width + c0] * (1.0 - fc) + data[r1 * width + c1] * fc;
    top * (1.0 - fr) + bot * fr
}

/// Extracts an `(s_x, s_y)` patch centered (sub-pixel) at `(row, col)`.
pub fn extract_patch(frame: &Frame, center: (f64, f64), size: (usize, usize)) -> Result<Patch> {
    let (w, h) = size;
    if w == 0 || h == 0 {
        return Err(Error::invalid("patch size must be positive"));
    }
    // Unit sampling step: the bilinear weights are constant over the patch,
    // so fully interior windows take a four-tap path with precomputed
    // weights. Windows touching the border fall back to clamped sampling.
    let top = center.0 - (h as f64 - 1.0) / 2.0;
    let left = center.1 - (w as f64 - 1.0) / 2.0;
    let r0f = top.floor();
    let c0f = left.floor();
    let interior = r0f >= 0.0
        && c0f >= 0.0
        && (r0f as usize) + h < frame.height
        && (c0f as usize) + w < frame.width;
    if !interior {
        return extract_scaled_patch(frame, center, (w as f64, h as f64), size);
    }
    let fr = top - r0f;
    let fc = left - c0f;
    let r0 = r0f as usize;
    let c0 = c0f as usize;
    let w00 = (1.0 - fr) * (1.0 - fc);
    let w01 = (1.0 - fr) * fc;
    let w10 = fr * (1.0 - fc);
    let w11 = fr * fc;
    let stride = frame.width;
    let mut data = Vec::with_capacity(w * h);
    for r in 0..h {
        let base = (r0 + r) * stride + c0;
        let row0 = &frame.intensities[base..base + w + 1];
        let row1 = &frame.intensities[base + stride..base + stride + w + 1];
        for c in 0..w {
            data.push(
                w00 * row0[c] + w01 * row0[c + 1] + w10 * row1[c] + w11 * row1[c + 1],
            );
        }
    }
    Patch::from_raw(w, h, data, center, frame.index)
}

/// Extracts a patch whose source footprint is `src_size` pixels but which is
/// resampled to `out_size`. With `src_size == out_size` this is plain
/// `extract_patch`. Used to normalize annotated boxes to the working patch
/// size.
pub fn extract_scaled_patch(
    frame: &Frame,
    center: (f64, f64),
    src_size: (f64, f64),
    out_size: (usize, usize),
) -> Result<Patch> {
    let (out_w, out_h) = out_size;
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid("patch size must be positive"));
    }
    if !(src_size.0 > 0.0 && src_size.1 > 0.0) {
        return Err(Error::invalid("source footprint must be positive"));
    }
    let step_c = src_size.0 / out_w as f64;
    let step_r = src_size.1 / out_h as f64;
    let half_r = (out_h as f64 - 1.0) / 2.0;
    let half_c = (out_w as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(out_w * out_h);
    for r in 0..out_h {
        let src_r = center.0 + (r as f64 - half_r) * step_r;
        for c in 0..out_w {
            let src_c = center.1 + (c as f64 - half_c) * step_c;
            data.push(frame.sample(src_r, src_c));
        }
    }
    Patch::from_raw(out_w, out_h, data, center, frame.index)
}

/// Bilinear resize (align-centers convention), used by the pyramid.
pub fn resize(frame: &Frame, out_w: usize, out_h: usize) -> Result<Frame> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid("resize target must be positive"));
    }
    let sx = frame.width as f64 / out_w as f64;
    let sy = frame.height as f64 / out_h as f64;
    let mut data = Vec::with_capacity(out_w * out_h);
    for r in 0..out_h {
        let src_r = (r as f64 + 0.5) * sy - 0.5;
        for c in 0..out_w {
            let src_c = (c as f64 + 0.5) * sx - 0.5;
            data.push(frame.sample(src_r, src_c));
        }
    }
    Frame::new(out_w, out_h, frame.index, data)
}

/// One level of an image pyramid. `scale` is the nominal `scale_step^k`.
#[derive(Debug, Clone)]
pub struct PyramidLevel {
    pub frame: Frame,
    pub scale: f64,
}

/// Downscaling pyramid: level 0 is the original, level k has sides
/// `round(side_0 * scale_step^k)`, resampled from level k-1. Stops before
/// either side drops below `min_side`.
pub fn image_pyramid(frame: &Frame, scale_step: f64, min_side: usize) -> Result<Vec<PyramidLevel>> {
    if !(scale_step > 0.0 && scale_step < 1.0) {
        return Err(Error::invalid(format!("scale_step {} not in (0, 1)", scale_step)));
    }
    if min_side == 0 {
        return Err(Error::invalid("min_side must be positive"));
    }
    let mut levels = vec![PyramidLevel { frame: frame.clone(), scale: 1.0 }];
    for k in 1.. {
        let scale = scale_step.powi(k);
        let w = (frame.width as f64 * scale).round() as usize;
        let h = (frame.height as f64 * scale).round() as usize;
        if w < min_side || h < min_side {
            break;
        }
        let prev = &levels.last().unwrap().frame;
        levels.push(PyramidLevel { frame: resize(prev, w, h)?, scale });
    }
    Ok(levels)
}

pub(crate) fn gradients_into(
    data: &[f64],
    width: usize,
    height: usize,
    gx: &mut Vec<f64>,
    gy: &mut Vec<f64>,
) {
    gx.clear();
    gx.resize(width * height, 0.0);
    gy.clear();
    gy.resize(width * height, 0.0);
    for r in 0..height {
        let row = r * width;
        for c in 0..width {
            gx[row + c] = if c == 0 {
                data[row + 1] - data[row]
            } else if c == width - 1 {
                data[row + c] - data[row + c - 1]
            } else {
                (data[row + c + 1] - data[row + c - 1]) * 0.5
            };
        }
    }
    for c in 0..width {
        for r in 0..height {
            let i = r * width + c;
            gy[i] = if r == 0 {
                data[i + width] - data[i]
            } else if r == height - 1 {
                data[i] - data[i - width]
            } else {
                (data[i + width] - data[i - width]) * 0.5
            };
        }
    }
}

pub(crate) fn gradients_raw(data: &[f64], width: usize, height: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = Vec::new();
    let mut gy = Vec::new();
    gradients_into(data, width, height, &mut gx, &mut gy);
    (gx, gy)
}

/// Central-difference gradients of a patch (one-sided at borders), with
/// magnitude and unsigned orientation.
pub fn spatial_gradients(patch: &Patch) -> Result<GradientField> {
    if patch.width < 3 || patch.height < 3 {
        return Err(Error::invalid("patch must be at least 3x3 for gradients"));
    }
    let (gx, gy) = gradients_raw(&patch.intensities, patch.width, patch.height);
    let mut magnitude = Vec::with_capacity(gx.len());
    let mut orientation = Vec::with_capacity(gx.len());
    for i in 0..gx.len() {
        let m = (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
        magnitude.push(m);
        if m == 0.0 {
            orientation.push(0.0);
        } else {
            let mut theta = gy[i].atan2(gx[i]);
            if theta < 0.0 {
                theta += std::f64::consts::PI;
            }
            if theta >= std::f64::consts::PI {
                theta -= std::f64::consts::PI;
            }
            orientation.push(theta);
        }
    }
    Ok(GradientField { width: patch.width, height: patch.height, gx, gy, magnitude, orientation })
}

const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

fn decode_gray(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::open(path).map_err(|e| Error::image(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        image::DynamicImage::ImageLuma8(buf) => {
            buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()
        }
        image::DynamicImage::ImageLumaA8(buf) => {
            buf.into_raw().chunks_exact(2).map(|px| px[0] as f64 / 255.0).collect()
        }
        image::DynamicImage::ImageRgb8(buf) => buf
            .into_raw()
            .chunks_exact(3)
            .map(|px| (LUMA_R * px[0] as f64 + LUMA_G * px[1] as f64 + LUMA_B * px[2] as f64) / 255.0)
            .collect(),
        image::DynamicImage::ImageRgba8(buf) => buf
            .into_raw()
            .chunks_exact(4)
            .map(|px| (LUMA_R * px[0] as f64 + LUMA_G * px[1] as f64 + LUMA_B * px[2] as f64) / 255.0)
            .collect(),
        image::DynamicImage::ImageLuma16(buf) => {
            buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()
        }
        _ => return Err(Error::image(path, "unsupported pixel format")),
    };
    if w == 0 || h == 0 {
        return Err(Error::image(path, "empty image"));
    }
    Ok((w, h, data))
}

/// Minimal glob: `*` matches any run of characters. Patterns like `*.png`
/// or `frame_*.pgm`.
fn pattern_matches(pattern: &str, name: &str) -> bool {
    match pattern.split_once('*') {
        None => pattern == name,
        Some((prefix, rest)) => {
            if !name.starts_with(prefix) {
                return false;
            }
            let tail = &name[prefix.len()..];
            // Only single-star patterns are needed; further stars match greedily.
            match rest.split_once('*') {
                None => tail.ends_with(rest),
                Some((mid, suffix)) => tail
                    .find(mid)
                    .map(|i| tail[i + mid.len()..].ends_with(suffix))
                    .unwrap_or(false),
            }
        }
    }
}

/// Loads all files matching `pattern` from `dir`, in lexicographic filename
/// order, as grayscale frames in [0, 1]. RGB inputs are converted with fixed
/// luma weights (0.299, 0.587, 0.114). Frame indices are assigned 0..n-1.
pub fn load_frame_sequence(dir: &Path, pattern: &str) -> Result<Vec<Frame>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(n) => n.to_owned(),
            None => continue,
        };
        if pattern_matches(pattern, &name) {
            paths.push(path);
        }
    }
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    if paths.is_empty() {
        return Err(Error::image(dir, format!("no frames found matching '{}'", pattern)));
    }
    let mut frames = Vec::with_capacity(paths.len());
    let mut dims: Option<(usize, usize)> = None;
    for (index, path) in paths.iter().enumerate() {
        let (w, h, data) = decode_gray(path)?;
        match dims {
            None => dims = Some((w, h)),
            Some((ew, eh)) if (ew, eh) != (w, h) => {
                return Err(Error::image(
                    path,
                    format!("dimensions {}x{} differ from first frame {}x{}", w, h, ew, eh),
                ));
            }
            _ => {}
        }
        frames.push(Frame::new(w, h, index, data)?);
    }
    Ok(frames)
}

/// Writes a frame as binary 8-bit PGM; [0,1] maps to 0..255 by rounding.
pub fn save_frame_pgm(frame: &Frame, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(frame.intensities.len() + 32);
    write!(bytes, "P5\n{} {}\n255\n", frame.width, frame.height)
        .expect("in-memory write cannot fail");
    bytes.extend(frame.intensities.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
