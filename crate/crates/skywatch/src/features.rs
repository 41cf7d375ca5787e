//! Gradient features: HoG descriptors for the shift regressors, a 3-D HoG
//! variant for the collision-course classifier, and oriented gradient-energy
//! channels with per-slice summed-area tables backing the box feature
//! `E(b, R, o)` used by the cube classifier's weak learners.
//!
//! Orientation binning is hard assignment to the nearest of B unsigned bin
//! centers `k*pi/B` (wrapping at pi). The assignment is computed as
//! `argmax_k |g . u_k|` over the bin center directions `u_k`, which is
//! algebraically the nearest-center rule without per-pixel trigonometry.

use crate::error::{Error, Result};
use crate::imagecore::{gradients_into, gradients_raw, Patch};
use crate::motion_comp::StCube;

/// Directions of the unsigned bin centers, for fast hard binning.
#[derive(Debug, Clone)]
struct BinTable {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl BinTable {
    fn new(bins: usize) -> Self {
        let mut cos = Vec::with_capacity(bins);
        let mut sin = Vec::with_capacity(bins);
        for k in 0..bins {
            let c = k as f64 * std::f64::consts::PI / bins as f64;
            cos.push(c.cos());
            sin.push(c.sin());
        }
        BinTable { cos, sin }
    }

    /// Nearest unsigned bin for gradient (gx, gy). Ties resolve to the lowest
    /// bin; a zero gradient maps to bin 0 (and carries zero magnitude anyway).
    #[inline]
    fn assign(&self, gx: f64, gy: f64) -> usize {
        let mut best = 0;
        let mut best_dot = -1.0;
        for (k, (c, s)) in self.cos.iter().zip(self.sin.iter()).enumerate() {
            let dot = (gx * c + gy * s).abs();
            if dot > best_dot {
                best_dot = dot;
                best = k;
            }
        }
        best
    }
}

// The regressor evaluates HoG once per compensation iteration; reusing the
// gradient and histogram buffers keeps that loop allocation-free.
thread_local! {
    static HOG_SCRATCH: std::cell::RefCell<(Vec<f64>, Vec<f64>, Vec<f64>)> =
        std::cell::RefCell::new((Vec::new(), Vec::new(), Vec::new()));
}

/// HoG geometry. Defaults follow the common pedestrian-detection setup:
/// 8x8-pixel cells, 2x2-cell blocks at 1-cell stride, 9 unsigned bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HogGeometry {
    pub cell_size: usize,
    pub block_cells: usize,
    pub block_stride: usize,
    pub bins: usize,
}

impl Default for HogGeometry {
    fn default() -> Self {
        HogGeometry { cell_size: 8, block_cells: 2, block_stride: 1, bins: 9 }
    }
}

impl HogGeometry {
    fn cells_for(&self, width: usize, height: usize) -> Result<(usize, usize)> {
        if self.cell_size == 0 || self.block_cells == 0 || self.block_stride == 0 || self.bins == 0 {
            return Err(Error::invalid("HoG geometry fields must be positive"));
        }
        if width % self.cell_size != 0 || height % self.cell_size != 0 {
            return Err(Error::geometry(format!(
                "patch {}x{} not divisible by cell size {}",
                width, height, self.cell_size
            )));
        }
        let cx = width / self.cell_size;
        let cy = height / self.cell_size;
        if cx < self.block_cells || cy < self.block_cells {
            return Err(Error::geometry("patch too small for one block"));
        }
        Ok((cx, cy))
    }

    fn blocks_for(&self, cells: usize) -> usize {
        (cells - self.block_cells) / self.block_stride + 1
    }

    /// Descriptor length for a `width x height` patch.
    pub fn descriptor_len(&self, width: usize, height: usize) -> Result<usize> {
        let (cx, cy) = self.cells_for(width, height)?;
        Ok(self.blocks_for(cx)
            * self.blocks_for(cy)
            * self.block_cells
            * self.block_cells
            * self.bins)
    }
}

/// Block-normalized descriptor. Component order: blocks row-major (by, bx),
/// cells within a block row-major (cy, cx), then bins.
#[derive(Debug, Clone, PartialEq)]
pub struct HogDescriptor {
    pub values: Vec<f64>,
    pub cells: (usize, usize),
    pub bins: usize,
}

const BLOCK_NORM_EPS: f64 = 1e-6;

fn cell_histograms(
    data: &[f64],
    width: usize,
    height: usize,
    cell: usize,
    cells_x: usize,
    bins: usize,
    table: &BinTable,
    gx: &mut Vec<f64>,
    gy: &mut Vec<f64>,
    hist: &mut [f64],
) {
    gradients_into(data, width, height, gx, gy);
    for r in 0..height {
        let cell_row = r / cell;
        for c in 0..width {
            let i = r * width + c;
            let m = (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
            if m > 0.0 {
                let b = table.assign(gx[i], gy[i]);
                hist[(cell_row * cells_x + c / cell) * bins + b] += m;
            }
        }
    }
}

fn normalize_blocks(
    hist: &[f64],
    cells_x: usize,
    cells_y: usize,
    bins: usize,
    geometry: &HogGeometry,
) -> Vec<f64> {
    let bx = geometry.blocks_for(cells_x);
    let by = geometry.blocks_for(cells_y);
    let bc = geometry.block_cells;
    let mut out = Vec::with_capacity(bx * by * bc * bc * bins);
    let mut block = vec![0.0; bc * bc * bins];
    for block_r in 0..by {
        for block_c in 0..bx {
            let mut idx = 0;
            for cy in 0..bc {
                let cell_r = block_r * geometry.block_stride + cy;
                for cx in 0..bc {
                    let cell_c = block_c * geometry.block_stride + cx;
                    let base = (cell_r * cells_x + cell_c) * bins;
                    block[idx..idx + bins].copy_from_slice(&hist[base..base + bins]);
                    idx += bins;
                }
            }
            let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
            let denom = norm + BLOCK_NORM_EPS;
            out.extend(block.iter().map(|v| v / denom));
        }
    }
    out
}

/// Histogram of oriented gradients of a single patch.
pub fn hog(patch: &Patch, geometry: &HogGeometry) -> Result<HogDescriptor> {
    let (cells_x, cells_y) = geometry.cells_for(patch.width, patch.height)?;
    let table = BinTable::new(geometry.bins);
    let values = HOG_SCRATCH.with(|scratch| {
        let (gx, gy, hist) = &mut *scratch.borrow_mut();
        hist.clear();
        hist.resize(cells_x * cells_y * geometry.bins, 0.0);
        cell_histograms(
            &patch.intensities,
            patch.width,
            patch.height,
            geometry.cell_size,
            cells_x,
            geometry.bins,
            &table,
            gx,
            gy,
            hist,
        );
        normalize_blocks(hist, cells_x, cells_y, geometry.bins, geometry)
    });
    Ok(HogDescriptor { values, cells: (cells_x, cells_y), bins: geometry.bins })
}

/// 3-D HoG over a cube: spatial bins accumulated per slice and summed over
/// time, plus two temporal bins holding positive and negative frame-to-frame
/// difference magnitude. Cells span the full temporal extent.
pub fn hog3d(cube: &StCube, geometry: &HogGeometry) -> Result<HogDescriptor> {
    let (cells_x, cells_y) = geometry.cells_for(cube.dims.s_x, cube.dims.s_y)?;
    let bins3d = geometry.bins + 2;
    let table = BinTable::new(geometry.bins);
    let width = cube.dims.s_x;
    let height = cube.dims.s_y;
    let cell = geometry.cell_size;
    let mut hist = vec![0.0; cells_x * cells_y * bins3d];

    for slice in &cube.slices {
        let (gx, gy) = gradients_raw(&slice.intensities, width, height);
        for r in 0..height {
            let cell_row = r / cell;
            for c in 0..width {
                let i = r * width + c;
                let m = (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
                if m > 0.0 {
                    let b = table.assign(gx[i], gy[i]);
                    hist[(cell_row * cells_x + c / cell) * bins3d + b] += m;
                }
            }
        }
    }
    for t in 0..cube.dims.s_t.saturating_sub(1) {
        let cur = &cube.slices[t].intensities;
        let next = &cube.slices[t + 1].intensities;
        for r in 0..height {
            let cell_row = r / cell;
            for c in 0..width {
                let i = r * width + c;
                let d = next[i] - cur[i];
                let base = (cell_row * cells_x + c / cell) * bins3d;
                if d > 0.0 {
                    hist[base + geometry.bins] += d;
                } else {
                    hist[base + geometry.bins + 1] -= d;
                }
            }
        }
    }
    let mut geom3d = *geometry;
    geom3d.bins = bins3d;
    let values = normalize_blocks(&hist, cells_x, cells_y, bins3d, &geom3d);
    Ok(HogDescriptor { values, cells: (cells_x, cells_y), bins: bins3d })
}

/// Oriented gradient-magnitude channels of a cube, with per-slice, per-bin
/// summed-area tables plus a per-slice all-orientation table.
#[derive(Debug, Clone)]
pub struct ChannelVolume {
    pub bins: usize,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// `[t][bin][pixel]`, flattened.
    channels: Vec<f64>,
    /// `(width+1) x (height+1)` integral per `(t, bin)`, flattened.
    integrals: Vec<f64>,
    /// `(width+1) x (height+1)` integral of total magnitude per `t`.
    total_integrals: Vec<f64>,
}

/// Default number of unsigned orientation channels for the classifier.
pub const DEFAULT_CHANNEL_BINS: usize = 8;

fn build_integral(grid: &[f64], width: usize, height: usize, out: &mut [f64]) {
    let stride = width + 1;
    debug_assert_eq!(out.len(), stride * (height + 1));
    for v in out[..stride].iter_mut() {
        *v = 0.0;
    }
    for r in 0..height {
        let mut row_sum = 0.0;
        out[(r + 1) * stride] = 0.0;
        for c in 0..width {
            row_sum += grid[r * width + c];
            out[(r + 1) * stride + c + 1] = out[r * stride + c + 1] + row_sum;
        }
    }
}

#[inline]
fn rect_sum(integral: &[f64], stride: usize, x0: usize, x1: usize, y0: usize, y1: usize) -> f64 {
    integral[y1 * stride + x1] - integral[y0 * stride + x1] - integral[y1 * stride + x0]
        + integral[y0 * stride + x0]
}

impl ChannelVolume {
    /// Per-pixel value of channel `bin` in slice `t`.
    pub fn channel_at(&self, t: usize, bin: usize, row: usize, col: usize) -> f64 {
        let npx = self.width * self.height;
        self.channels[(t * self.bins + bin) * npx + row * self.width + col]
    }

    /// Sum of channel `bin` over the half-open rectangle, via the table.
    pub fn rect(&self, t: usize, bin: usize, x0: usize, x1: usize, y0: usize, y1: usize) -> f64 {
        let stride = self.width + 1;
        let per = stride * (self.height + 1);
        rect_sum(&self.integrals[(t * self.bins + bin) * per..], stride, x0, x1, y0, y1)
    }

    fn rect_total(&self, t: usize, x0: usize, x1: usize, y0: usize, y1: usize) -> f64 {
        let stride = self.width + 1;
        let per = stride * (self.height + 1);
        rect_sum(&self.total_integrals[t * per..], stride, x0, x1, y0, y1)
    }
}

/// A weak learner's region: half-open pixel ranges within the cube plus an
/// orientation bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CubeBox {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub t0: usize,
    pub t1: usize,
    pub orientation: usize,
}

impl CubeBox {
    pub fn validate(&self, volume: &ChannelVolume) -> Result<()> {
        if self.x0 >= self.x1 || self.y0 >= self.y1 || self.t0 >= self.t1 {
            return Err(Error::invalid("cube box has an empty range"));
        }
        if self.x1 > volume.width || self.y1 > volume.height || self.t1 > volume.frames {
            return Err(Error::invalid("cube box exceeds cube dimensions"));
        }
        if self.orientation >= volume.bins {
            return Err(Error::invalid("orientation bin out of range"));
        }
        Ok(())
    }
}

/// Builds the orientation channels of a cube. Each pixel's gradient magnitude
/// is hard-assigned to exactly one unsigned bin, so the channels sum to the
/// magnitude image.
pub fn build_channels(cube: &StCube, bins: usize) -> Result<ChannelVolume> {
    if cube.dims.s_x < 3 || cube.dims.s_y < 3 {
        return Err(Error::invalid("cube spatial dims must be at least 3x3"));
    }
    if bins == 0 {
        return Err(Error::invalid("bins must be positive"));
    }
    let width = cube.dims.s_x;
    let height = cube.dims.s_y;
    let frames = cube.dims.s_t;
    let npx = width * height;
    let table = BinTable::new(bins);
    let stride = width + 1;
    let per_integral = stride * (height + 1);

    let mut channels = vec![0.0; frames * bins * npx];
    let mut integrals = vec![0.0; frames * bins * per_integral];
    let mut total_integrals = vec![0.0; frames * per_integral];
    let mut magnitude = vec![0.0; npx];

    for (t, slice) in cube.slices.iter().enumerate() {
        let (gx, gy) = gradients_raw(&slice.intensities, width, height);
        magnitude.iter_mut().for_each(|m| *m = 0.0);
        for i in 0..npx {
            let m = (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
            if m > 0.0 {
                let b = table.assign(gx[i], gy[i]);
                channels[(t * bins + b) * npx + i] = m;
                magnitude[i] = m;
            }
        }
        for b in 0..bins {
            let grid = &channels[(t * bins + b) * npx..(t * bins + b + 1) * npx];
            build_integral(
                grid,
                width,
                height,
                &mut integrals[(t * bins + b) * per_integral..(t * bins + b + 1) * per_integral],
            );
        }
        build_integral(
            &magnitude,
            width,
            height,
            &mut total_integrals[t * per_integral..(t + 1) * per_integral],
        );
    }
    Ok(ChannelVolume { bins, width, height, frames, channels, integrals, total_integrals })
}

const ENERGY_DENOM_FLOOR: f64 = 1e-12;

/// Normalized gradient energy of one orientation over a box: the box's energy
/// in bin `o` divided by its all-orientation energy. 0 for featureless
/// regions. Always in [0, 1].
pub fn gradient_energy(channels: &ChannelVolume, cube_box: &CubeBox) -> Result<f64> {
    cube_box.validate(channels)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for t in cube_box.t0..cube_box.t1 {
        num +=
            channels.rect(t, cube_box.orientation, cube_box.x0, cube_box.x1, cube_box.y0, cube_box.y1);
        den += channels.rect_total(t, cube_box.x0, cube_box.x1, cube_box.y0, cube_box.y1);
    }
    if den < ENERGY_DENOM_FLOOR {
        return Ok(0.0);
    }
    Ok((num / den).clamp(0.0, 1.0))
}
