//! Spatio-temporal cubes and object-centric motion stabilization.
//!
//! A cube for frame `t` stacks `s_t` spatial slices taken from frames
//! `t - s_t + 1 ..= t`. Without compensation every slice is extracted at the
//! anchor position. With compensation each slice is re-centered
//! independently: predict how far the object is from the current patch
//! center, move the center onto it, and repeat until the squared step falls
//! below `eps` or `max_iter` predictions have been spent.
//!
//! The shift convention is fixed here once and used everywhere: a predictor
//! returns `(sh_h, sh_v)` = (column, row) offset of the object *from the
//! patch center*, so the update `center += (sh_v, sh_h)` is a contraction
//! when predictions are accurate.

use crate::error::{Error, Result};
use crate::imagecore::{extract_patch, Frame, Patch};

/// Spatial and temporal extent of a cube. `s_x` is horizontal (columns).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CubeDims {
    pub s_x: usize,
    pub s_y: usize,
    pub s_t: usize,
}

impl CubeDims {
    pub const fn new(s_x: usize, s_y: usize, s_t: usize) -> Self {
        CubeDims { s_x, s_y, s_t }
    }
}

impl Default for CubeDims {
    fn default() -> Self {
        CubeDims::new(40, 40, 4)
    }
}

/// Anything that can predict the object's offset from a patch center.
/// Implemented by the trained shift regressor and by test stubs.
pub trait ShiftPredictor {
    /// `(s_x, s_y)` of the patches this predictor accepts.
    fn patch_size(&self) -> (usize, usize);
    /// `(sh_h, sh_v)`: horizontal and vertical offset of the object from the
    /// patch center, in pixels.
    fn predict(&self, patch: &Patch) -> (f64, f64);
}

/// A stack of `s_t` slices with per-slice centers. Slice `k` (0-based) comes
/// from frame `t - s_t + 1 + k`; its center after compensation is recorded in
/// the slice's `source_center`.
#[derive(Debug, Clone)]
pub struct StCube {
    pub dims: CubeDims,
    pub slices: Vec<Patch>,
    /// `(i, j, t)` of the original, uncompensated cube.
    pub anchor: (f64, f64, usize),
    /// Per slice: did the compensation loop exit on a small step (true) or
    /// hit the iteration cap (false)? All true for uncompensated cubes.
    pub converged: Vec<bool>,
    /// False when the anchor lay outside the frame and edge replication
    /// filled part of the cube.
    pub anchor_inside: bool,
}

impl StCube {
    pub fn from_slices(dims: CubeDims, slices: Vec<Patch>, anchor: (f64, f64, usize)) -> Result<Self> {
        if slices.len() != dims.s_t {
            return Err(Error::invalid("slice count does not match s_t"));
        }
        for s in &slices {
            if s.width != dims.s_x || s.height != dims.s_y {
                return Err(Error::invalid("slice size does not match cube dims"));
            }
        }
        let n = slices.len();
        Ok(StCube { dims, slices, anchor, converged: vec![true; n], anchor_inside: true })
    }

    /// Per-slice centers, in slice order.
    pub fn centers(&self) -> Vec<(f64, f64)> {
        self.slices.iter().map(|s| s.source_center).collect()
    }
}

fn check_temporal(frames: &[Frame], t: usize, dims: &CubeDims) -> Result<()> {
    if dims.s_t == 0 {
        return Err(Error::invalid("s_t must be positive"));
    }
    if t + 1 < dims.s_t {
        return Err(Error::invalid(format!(
            "frame {} has fewer than s_t = {} predecessors",
            t, dims.s_t
        )));
    }
    if t >= frames.len() {
        return Err(Error::invalid(format!("frame index {} out of range", t)));
    }
    Ok(())
}

fn anchor_is_inside(frame: &Frame, anchor: (f64, f64)) -> bool {
    anchor.0 >= 0.0
        && anchor.1 >= 0.0
        && anchor.0 <= (frame.height - 1) as f64
        && anchor.1 <= (frame.width - 1) as f64
}

/// Uncompensated cube: every slice extracted at the anchor.
pub fn extract_cube(
    frames: &[Frame],
    anchor: (f64, f64),
    t: usize,
    dims: CubeDims,
) -> Result<StCube> {
    check_temporal(frames, t, &dims)?;
    let mut slices = Vec::with_capacity(dims.s_t);
    for k in 0..dims.s_t {
        let frame = &frames[t + 1 + k - dims.s_t];
        slices.push(extract_patch(frame, anchor, (dims.s_x, dims.s_y))?);
    }
    let inside = anchor_is_inside(&frames[t], anchor);
    let mut cube = StCube::from_slices(dims, slices, (anchor.0, anchor.1, t))?;
    cube.anchor_inside = inside;
    Ok(cube)
}

/// Iterative regression-based stabilization of each slice.
pub fn compensate_cube<P: ShiftPredictor>(
    frames: &[Frame],
    anchor: (f64, f64),
    t: usize,
    dims: CubeDims,
    predictor: &P,
    eps: f64,
    max_iter: usize,
) -> Result<StCube> {
    check_temporal(frames, t, &dims)?;
    if predictor.patch_size() != (dims.s_x, dims.s_y) {
        return Err(Error::geometry(format!(
            "predictor expects {:?} patches, cube is {}x{}",
            predictor.patch_size(),
            dims.s_x,
            dims.s_y
        )));
    }
    if max_iter == 0 {
        return Err(Error::invalid("max_iter must be positive"));
    }
    let mut slices = Vec::with_capacity(dims.s_t);
    let mut converged = Vec::with_capacity(dims.s_t);
    for k in 0..dims.s_t {
        let frame = &frames[t + 1 + k - dims.s_t];
        let mut center = anchor;
        let mut patch = extract_patch(frame, center, (dims.s_x, dims.s_y))?;
        let mut ok = false;
        for _ in 0..max_iter {
            let (sh_h, sh_v) = predictor.predict(&patch);
            let next = (center.0 + sh_v, center.1 + sh_h);
            let step = (next.0 - center.0).powi(2) + (next.1 - center.1).powi(2);
            center = next;
            patch = extract_patch(frame, center, (dims.s_x, dims.s_y))?;
            if step < eps {
                ok = true;
                break;
            }
        }
        slices.push(patch);
        converged.push(ok);
    }
    let inside = anchor_is_inside(&frames[t], anchor);
    Ok(StCube {
        dims,
        slices,
        anchor: (anchor.0, anchor.1, t),
        converged,
        anchor_inside: inside,
    })
}

/// Motion summary of a stabilized cube.
#[derive(Debug, Clone)]
pub struct MotionEstimate {
    /// Corrected per-slice centers `(i, j)`.
    pub centers: Vec<(f64, f64)>,
    /// Least-squares slope of centers vs slice index, pixels/frame.
    pub velocity: (f64, f64),
    /// Metric speed, present when fps and object size were supplied.
    pub speed_mps: Option<f64>,
}

/// Velocity from a least-squares line fit over the corrected centers.
/// When `fps` and the object's physical size are known, also converts to
/// meters per second using the apparent size in pixels.
pub fn estimate_motion(
    cube: &StCube,
    fps: Option<f64>,
    object_size_m: Option<f64>,
    object_size_px: f64,
) -> MotionEstimate {
    let centers = cube.centers();
    let n = centers.len();
    let velocity = if n < 2 {
        (0.0, 0.0)
    } else {
        let nf = n as f64;
        let k_mean = (nf - 1.0) / 2.0;
        let mut denom = 0.0;
        let mut num_i = 0.0;
        let mut num_j = 0.0;
        let mean_i = centers.iter().map(|c| c.0).sum::<f64>() / nf;
        let mean_j = centers.iter().map(|c| c.1).sum::<f64>() / nf;
        for (k, c) in centers.iter().enumerate() {
            let dk = k as f64 - k_mean;
            denom += dk * dk;
            num_i += dk * (c.0 - mean_i);
            num_j += dk * (c.1 - mean_j);
        }
        if denom == 0.0 {
            (0.0, 0.0)
        } else {
            (num_i / denom, num_j / denom)
        }
    };
    let speed_mps = match (fps, object_size_m) {
        (Some(fps), Some(size_m)) if object_size_px > 0.0 => {
            let px_per_frame = (velocity.0 * velocity.0 + velocity.1 * velocity.1).sqrt();
            Some(px_per_frame * fps * size_m / object_size_px)
        }
        _ => None,
    };
    MotionEstimate { centers, velocity, speed_mps }
}
