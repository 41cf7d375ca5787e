//! End-to-end sliding-window detection.
//!
//! Candidate windows are scanned on a per-frame image pyramid (one upsampled
//! level for sub-window targets, then geometrically downscaled levels), each
//! window becomes a causal st-cube spanning the previous `s_t` frames,
//! optionally stabilized by the shift regressor, scored by the cube
//! classifier, thresholded, and reduced by greedy IoU suppression per frame
//! across scales. Detection boxes are reported in original-image pixels; with
//! compensation on, the box center is the stabilized center of the detection
//! frame's slice, which localizes off-grid targets.

use crate::cube_classifier::{score_cube, CubeClassifier};
use crate::error::{Error, Result};
use crate::evalkit::{box_iou, GroundTruthBox};
use crate::imagecore::{resize, Frame};
use crate::motion_comp::{
    compensate_cube, estimate_motion, extract_cube, CubeDims, MotionEstimate, ShiftPredictor,
    StCube,
};
use crate::parallel::map_chunked;
use crate::rng::Rng;
use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

/// One detection in original-image coordinates.
#[derive(Debug, Clone)]
pub struct Detection {
    pub frame: usize,
    /// `(row, col)` center.
    pub center: (f64, f64),
    /// Box side in original-image pixels.
    pub side: f64,
    pub score: f64,
    /// Nominal pyramid scale the window was found at (2.0 = upsampled).
    pub scale: f64,
    /// Per-cube motion summary, present when compensation ran.
    pub motion: Option<MotionEstimate>,
}

#[derive(Debug, Clone)]
pub struct DetectorConfig {
    pub dims: CubeDims,
    /// Window stride in pixels, applied at every pyramid level.
    pub stride: usize,
    pub scale_step: f64,
    /// Pyramid stops before a side drops below this; must fit the window.
    pub min_side: usize,
    /// Detections below this score are dropped.
    pub threshold: f64,
    /// Greedy NMS IoU threshold.
    pub nms_overlap: f64,
    /// Stabilize each candidate cube with the shift regressor.
    pub compensation: bool,
    /// Include one 2x upsampled level for targets smaller than the window.
    pub upsample: bool,
    pub eps: f64,
    pub max_iter: usize,
    pub threads: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            dims: CubeDims::default(),
            stride: 8,
            scale_step: 0.8,
            min_side: 40,
            threshold: 0.5,
            nms_overlap: 0.3,
            compensation: true,
            upsample: true,
            eps: 1.0,
            max_iter: 10,
            threads: 1,
        }
    }
}

impl DetectorConfig {
    fn validate(&self) -> Result<()> {
        if !(self.scale_step > 0.0 && self.scale_step < 1.0) {
            return Err(Error::invalid("scale_step must be in (0, 1)"));
        }
        if self.min_side < self.dims.s_x.max(self.dims.s_y) {
            return Err(Error::invalid("min_side must fit the detection window"));
        }
        if self.stride == 0 {
            return Err(Error::invalid("stride must be positive"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid("threshold must be in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct LevelSpec {
    width: usize,
    height: usize,
    scale: f64,
}

fn level_specs(w0: usize, h0: usize, config: &DetectorConfig) -> Vec<LevelSpec> {
    let mut specs = Vec::new();
    if config.upsample {
        // Upsampled levels continue the same geometric ladder up to 2x, so
        // adjacent detection box sizes always overlap enough for NMS to merge
        // cross-scale duplicates.
        let mut upscales = Vec::new();
        for k in 1.. {
            let scale = config.scale_step.powi(-k);
            if scale > 2.0 {
                break;
            }
            upscales.push(scale);
        }
        for &scale in upscales.iter().rev() {
            specs.push(LevelSpec {
                width: (w0 as f64 * scale).round() as usize,
                height: (h0 as f64 * scale).round() as usize,
                scale,
            });
        }
    }
    for k in 0.. {
        let scale = config.scale_step.powi(k);
        let w = (w0 as f64 * scale).round() as usize;
        let h = (h0 as f64 * scale).round() as usize;
        if w < config.min_side || h < config.min_side {
            break;
        }
        specs.push(LevelSpec { width: w, height: h, scale });
    }
    specs
}

/// Resized copies of one frame for every level spec. Downscaled levels chain
/// from the previous one; the upsampled level comes straight from the
/// original.
fn build_levels(frame: &Frame, specs: &[LevelSpec]) -> Result<Vec<Frame>> {
    let mut levels = Vec::with_capacity(specs.len());
    let mut last_down: Option<usize> = None;
    for spec in specs {
        let level = if spec.scale > 1.0 {
            resize(frame, spec.width, spec.height)?
        } else if spec.scale == 1.0 {
            frame.clone()
        } else {
            let src = match last_down {
                Some(i) => &levels[i],
                None => frame,
            };
            resize(src, spec.width, spec.height)?
        };
        if spec.scale <= 1.0 {
            last_down = Some(levels.len());
        }
        levels.push(level);
    }
    Ok(levels)
}

#[inline]
fn to_level(coord: f64, orig: usize, level: usize) -> f64 {
    (coord + 0.5) * level as f64 / orig as f64 - 0.5
}

#[inline]
fn to_original(coord: f64, orig: usize, level: usize) -> f64 {
    (coord + 0.5) * orig as f64 / level as f64 - 0.5
}

/// Rolling per-frame pyramids for the trailing `s_t` frames.
struct PyramidWindow<'a> {
    frames: &'a [Frame],
    specs: &'a [LevelSpec],
    cache: VecDeque<(usize, Vec<Frame>)>,
    capacity: usize,
}

impl<'a> PyramidWindow<'a> {
    fn new(frames: &'a [Frame], specs: &'a [LevelSpec], capacity: usize) -> Self {
        PyramidWindow { frames, specs, cache: VecDeque::new(), capacity }
    }

    /// Levels of frames `t-s_t+1 ..= t`, grouped per level:
    /// result[level] = the s_t level-frames in temporal order.
    fn window(&mut self, t: usize, s_t: usize) -> Result<Vec<Vec<Frame>>> {
        for f in (t + 1 - s_t)..=t {
            if self.cache.iter().all(|(idx, _)| *idx != f) {
                let levels = build_levels(&self.frames[f], self.specs)?;
                self.cache.push_back((f, levels));
                while self.cache.len() > self.capacity {
                    self.cache.pop_front();
                }
            }
        }
        let mut out = vec![Vec::with_capacity(s_t); self.specs.len()];
        for f in (t + 1 - s_t)..=t {
            let levels = &self
                .cache
                .iter()
                .find(|(idx, _)| *idx == f)
                .expect("frame pyramid just inserted")
                .1;
            for (l, frame) in levels.iter().enumerate() {
                out[l].push(frame.clone());
            }
        }
        Ok(out)
    }
}

fn scan_frame<P: ShiftPredictor + Sync>(
    t: usize,
    level_frames: &[Vec<Frame>],
    specs: &[LevelSpec],
    w0: usize,
    h0: usize,
    predictor: &P,
    classifier: &CubeClassifier,
    config: &DetectorConfig,
) -> Result<Vec<Detection>> {
    let dims = config.dims;
    let local_t = dims.s_t - 1;
    // Work unit: one row of windows at one level.
    let mut units: Vec<(usize, usize)> = Vec::new();
    for (l, spec) in specs.iter().enumerate() {
        let mut y0 = 0;
        while y0 + dims.s_y <= spec.height {
            units.push((l, y0));
            y0 += config.stride;
        }
    }
    let results = map_chunked(config.threads, &units, |&(l, y0)| -> Result<Vec<Detection>> {
        let spec = specs[l];
        let frames_l = &level_frames[l];
        let mut row_out = Vec::new();
        let half_r = (dims.s_y as f64 - 1.0) / 2.0;
        let half_c = (dims.s_x as f64 - 1.0) / 2.0;
        let mut x0 = 0;
        while x0 + dims.s_x <= spec.width {
            let anchor = (y0 as f64 + half_r, x0 as f64 + half_c);
            let cube = if config.compensation {
                compensate_cube(
                    frames_l,
                    anchor,
                    local_t,
                    dims,
                    predictor,
                    config.eps,
                    config.max_iter,
                )?
            } else {
                extract_cube(frames_l, anchor, local_t, dims)?
            };
            let score = score_cube(classifier, &cube)?;
            if score >= config.threshold {
                let center_lvl = if config.compensation {
                    cube.slices[local_t].source_center
                } else {
                    anchor
                };
                let center = (
                    to_original(center_lvl.0, h0, spec.height),
                    to_original(center_lvl.1, w0, spec.width),
                );
                let side = dims.s_x as f64 * w0 as f64 / spec.width as f64;
                let motion = if config.compensation {
                    let m = estimate_motion(&cube, None, None, dims.s_x as f64);
                    let fr = h0 as f64 / spec.height as f64;
                    let fc = w0 as f64 / spec.width as f64;
                    Some(MotionEstimate {
                        centers: m
                            .centers
                            .iter()
                            .map(|c| {
                                (
                                    to_original(c.0, h0, spec.height),
                                    to_original(c.1, w0, spec.width),
                                )
                            })
                            .collect(),
                        velocity: (m.velocity.0 * fr, m.velocity.1 * fc),
                        speed_mps: None,
                    })
                } else {
                    None
                };
                row_out.push(Detection { frame: t, center, side, score, scale: spec.scale, motion });
            }
            x0 += config.stride;
        }
        Ok(row_out)
    });
    let mut detections = Vec::new();
    for r in results {
        detections.extend(r?);
    }
    Ok(detections)
}

/// Greedy non-maximum suppression: repeatedly keep the highest-score
/// detection and discard everything overlapping it by more than
/// `overlap_threshold` IoU. Ties break on lower (row, col, scale).
pub fn nms(detections: &[Detection], overlap_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        let da = &detections[a];
        let db = &detections[b];
        db.score
            .partial_cmp(&da.score)
            .unwrap()
            .then(da.center.0.partial_cmp(&db.center.0).unwrap())
            .then(da.center.1.partial_cmp(&db.center.1).unwrap())
            .then(da.scale.partial_cmp(&db.scale).unwrap())
    });
    let mut suppressed = vec![false; detections.len()];
    let mut kept = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        kept.push(detections[i].clone());
        for &j in &order[rank + 1..] {
            if suppressed[j] {
                continue;
            }
            let iou = box_iou(
                detections[i].center,
                detections[i].side,
                detections[j].center,
                detections[j].side,
            );
            if iou > overlap_threshold {
                suppressed[j] = true;
            }
        }
    }
    kept
}

/// Runs the full detector over a frame sequence. Returns detections sorted by
/// descending score; per frame, survivors of IoU suppression across scales.
pub fn detect<P: ShiftPredictor + Sync>(
    frames: &[Frame],
    predictor: &P,
    classifier: &CubeClassifier,
    config: &DetectorConfig,
) -> Result<Vec<Detection>> {
    config.validate()?;
    let dims = config.dims;
    if frames.len() < dims.s_t {
        return Err(Error::invalid(format!(
            "need at least {} frames, got {}",
            dims.s_t,
            frames.len()
        )));
    }
    if classifier.dims != dims {
        return Err(Error::geometry("classifier dims do not match detector config"));
    }
    if config.compensation && predictor.patch_size() != (dims.s_x, dims.s_y) {
        return Err(Error::geometry("regressor geometry does not match detector config"));
    }
    let w0 = frames[0].width;
    let h0 = frames[0].height;
    let specs = level_specs(w0, h0, config);
    if specs.is_empty() {
        return Err(Error::invalid("frame smaller than the detection window"));
    }
    let mut pyramids = PyramidWindow::new(frames, &specs, dims.s_t + 1);
    let mut all = Vec::new();
    for t in (dims.s_t - 1)..frames.len() {
        let level_frames = pyramids.window(t, dims.s_t)?;
        let frame_dets =
            scan_frame(t, &level_frames, &specs, w0, h0, predictor, classifier, config)?;
        all.extend(nms(&frame_dets, config.nms_overlap));
    }
    all.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.frame.cmp(&b.frame))
            .then(a.center.0.partial_cmp(&b.center.0).unwrap())
            .then(a.center.1.partial_cmp(&b.center.1).unwrap())
            .then(a.scale.partial_cmp(&b.scale).unwrap())
    });
    Ok(all)
}

/// Training-set assembly controls.
#[derive(Debug, Clone)]
pub struct TrainSetConfig {
    /// Pick the pyramid level where the annotated side appears closest to
    /// this many pixels.
    pub apparent_target: f64,
    /// Also extract positives this many pyramid levels to either side of the
    /// best one, so the classifier sees the scale quantization it will meet
    /// when scanning.
    pub positive_level_radius: usize,
    /// Uniform anchor jitter applied to positives, in level pixels.
    pub positive_jitter: f64,
    /// Number of uniformly sampled background cubes.
    pub negatives: usize,
    /// A negative anchor is rejected while its window overlaps any ground
    /// truth of its frame by more than this IoU.
    pub negative_max_iou: f64,
    pub seed: u64,
}

impl Default for TrainSetConfig {
    fn default() -> Self {
        TrainSetConfig {
            apparent_target: 36.0,
            positive_level_radius: 1,
            positive_jitter: 4.0,
            negatives: 600,
            negative_max_iou: 0.2,
            seed: 0,
        }
    }
}

/// Builds labeled training cubes: positives anchored (with jitter) on ground
/// truth at the pyramid level matching each object's size, negatives sampled
/// uniformly away from ground truth. Cubes are stabilized exactly as at
/// detection time when `config.compensation` is on.
pub fn build_training_cubes<P: ShiftPredictor>(
    frames: &[Frame],
    ground_truths: &[GroundTruthBox],
    predictor: &P,
    config: &DetectorConfig,
    train: &TrainSetConfig,
) -> Result<(Vec<StCube>, Vec<i8>)> {
    config.validate()?;
    let dims = config.dims;
    if frames.len() < dims.s_t {
        return Err(Error::invalid("too few frames"));
    }
    let w0 = frames[0].width;
    let h0 = frames[0].height;
    let specs = level_specs(w0, h0, config);
    let mut rng = Rng::derive(train.seed, 0x7E57);

    struct Request {
        frame: usize,
        level: usize,
        anchor: (f64, f64),
        label: i8,
    }
    let mut requests: Vec<Request> = Vec::new();

    for gt in ground_truths {
        if gt.frame < dims.s_t - 1 || gt.frame >= frames.len() || gt.side <= 0.0 {
            continue;
        }
        let mut best = 0usize;
        let mut best_err = f64::INFINITY;
        for (l, spec) in specs.iter().enumerate() {
            let apparent = gt.side * spec.width as f64 / w0 as f64;
            let err = (apparent - train.apparent_target).abs();
            if err < best_err {
                best_err = err;
                best = l;
            }
        }
        let lo = best.saturating_sub(train.positive_level_radius);
        let hi = (best + train.positive_level_radius).min(specs.len() - 1);
        for level in lo..=hi {
            let spec = specs[level];
            // Skip neighbor levels where the window-sized box could not reach
            // IoU 0.5 with the ground truth even when perfectly centered
            // (apparent size outside window/sqrt(2) .. window*sqrt(2)).
            let apparent = gt.side * spec.width as f64 / w0 as f64;
            let window = dims.s_x as f64;
            let ratio = if apparent > window { window / apparent } else { apparent / window };
            if level != best && ratio * ratio < 0.5 {
                continue;
            }
            let center = (
                to_level(gt.center.0, h0, spec.height),
                to_level(gt.center.1, w0, spec.width),
            );
            let j = train.positive_jitter;
            let anchor =
                (center.0 + rng.range_f64(-j, j), center.1 + rng.range_f64(-j, j));
            requests.push(Request { frame: gt.frame, level, anchor, label: 1 });
        }
    }
    if requests.is_empty() {
        return Err(Error::invalid("no usable ground truth for training"));
    }

    let evaluable = (dims.s_t - 1)..frames.len();
    let mut drawn = 0usize;
    let mut attempts = 0usize;
    while drawn < train.negatives {
        attempts += 1;
        if attempts > train.negatives * 200 {
            return Err(Error::invalid("could not sample negatives away from ground truth"));
        }
        let t = evaluable.start + rng.below((evaluable.end - evaluable.start) as u64) as usize;
        let l = rng.below(specs.len() as u64) as usize;
        let spec = specs[l];
        let half_r = (dims.s_y as f64 - 1.0) / 2.0;
        let half_c = (dims.s_x as f64 - 1.0) / 2.0;
        let anchor = (
            rng.range_f64(half_r, spec.height as f64 - 1.0 - half_r),
            rng.range_f64(half_c, spec.width as f64 - 1.0 - half_c),
        );
        let center_orig = (
            to_original(anchor.0, h0, spec.height),
            to_original(anchor.1, w0, spec.width),
        );
        let side_orig = dims.s_x as f64 * w0 as f64 / spec.width as f64;
        let clear = ground_truths
            .iter()
            .filter(|g| g.frame == t)
            .all(|g| box_iou(center_orig, side_orig, g.center, g.side) <= train.negative_max_iou);
        if !clear {
            continue;
        }
        requests.push(Request { frame: t, level: l, anchor, label: -1 });
        drawn += 1;
    }

    requests.sort_by_key(|r| r.frame);
    let mut pyramids = PyramidWindow::new(frames, &specs, dims.s_t + 1);
    let mut cubes = Vec::with_capacity(requests.len());
    let mut labels = Vec::with_capacity(requests.len());
    let mut current: Option<(usize, Vec<Vec<Frame>>)> = None;
    for req in &requests {
        if current.as_ref().map(|(t, _)| *t) != Some(req.frame) {
            current = Some((req.frame, pyramids.window(req.frame, dims.s_t)?));
        }
        let level_frames = &current.as_ref().unwrap().1[req.level];
        let local_t = dims.s_t - 1;
        let cube = if config.compensation {
            compensate_cube(
                level_frames,
                req.anchor,
                local_t,
                dims,
                predictor,
                config.eps,
                config.max_iter,
            )?
        } else {
            extract_cube(level_frames, req.anchor, local_t, dims)?
        };
        cubes.push(cube);
        labels.push(req.label);
    }
    Ok((cubes, labels))
}

/// Detections CSV: `frame,center_x,center_y,side,score` with fixed 6-decimal
/// reals. center_x is the column coordinate.
pub fn write_detections_csv(path: &Path, detections: &[Detection]) -> Result<()> {
    let mut s = String::from("frame,center_x,center_y,side,score\n");
    for d in detections {
        writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6}",
            d.frame, d.center.1, d.center.0, d.side, d.score
        )
        .expect("in-memory write cannot fail");
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_detections_csv(path: &Path) -> Result<Vec<Detection>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("frame")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::format(path, format!("line {}: expected 5 fields", lineno + 1)));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::format(path, format!("line {}: bad number '{}'", lineno + 1, s)))
        };
        let frame = fields[0].trim().parse::<usize>().map_err(|_| {
            Error::format(path, format!("line {}: bad frame index '{}'", lineno + 1, fields[0]))
        })?;
        out.push(Detection {
            frame,
            center: (parse(fields[2])?, parse(fields[1])?),
            side: parse(fields[3])?,
            score: parse(fields[4])?,
            scale: 1.0,
            motion: None,
        });
    }
    Ok(out)
}
