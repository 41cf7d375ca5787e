//! Synthetic video with ground truth: small anti-aliased targets moving over
//! a drifting value-noise background, plus per-pixel Gaussian noise.
//!
//! Everything derives from the config seed. Each frame renders from its own
//! derived stream, so frames can be generated in parallel and the output is
//! byte-identical for any thread count. Two named benchmark configs are
//! shipped: `bench-easy` (high contrast, calm background) and `bench-hard`
//! (low contrast, strong drift, heavy noise); a third models the
//! collision-course geometry (stationary bearing, growing apparent size).

use crate::error::{Error, Result};
use crate::evalkit::GroundTruthBox;
use crate::imagecore::Frame;
use crate::parallel::map_chunked;
use crate::rng::{hash2, Rng};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetShape {
    Disc,
    Cross,
    Blob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeMode {
    /// Each target keeps one side drawn from the range.
    Fixed,
    /// Every target's side sweeps the range linearly over the sequence.
    Growing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub targets: usize,
    pub shape: TargetShape,
    /// Target side range in pixels.
    pub side: (f64, f64),
    /// Intensity offset magnitude of targets against the local background.
    pub contrast: (f64, f64),
    /// Probability that a target is darker than the background.
    pub dark_fraction: f64,
    /// Speed magnitude range, pixels per frame.
    pub speed: (f64, f64),
    pub jitter_amplitude: f64,
    pub jitter_period: f64,
    /// Feature size of the background texture, pixels.
    pub background_scale: f64,
    pub background_octaves: usize,
    /// Texture amplitude around mid-gray.
    pub background_contrast: f64,
    /// Background drift, pixels per frame (row, col).
    pub drift: (f64, f64),
    pub noise_sigma: f64,
    pub size_mode: SizeMode,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TargetParams {
    pub start: (f64, f64),
    pub velocity: (f64, f64),
    pub side_start: f64,
    pub side_end: f64,
    /// Signed: negative for targets darker than the background.
    pub contrast: f64,
    pub phase: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub frames: Vec<Frame>,
    /// One record per (frame, target), frame-major. Doubles as the
    /// annotation stream for shift-sample generation.
    pub ground_truth: Vec<GroundTruthBox>,
    pub targets: Vec<TargetParams>,
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = smoothstep(x - x0);
    let fy = smoothstep(y - y0);
    let xi = x0 as i64;
    let yi = y0 as i64;
    let v00 = hash2(seed, xi, yi);
    let v10 = hash2(seed, xi + 1, yi);
    let v01 = hash2(seed, xi, yi + 1);
    let v11 = hash2(seed, xi + 1, yi + 1);
    let top = v00 * (1.0 - fx) + v10 * fx;
    let bot = v01 * (1.0 - fx) + v11 * fx;
    top * (1.0 - fy) + bot * fy
}

fn fractal_noise(seed: u64, x: f64, y: f64, octaves: usize) -> f64 {
    let mut sum = 0.0;
    let mut amp = 1.0;
    let mut total = 0.0;
    let mut freq = 1.0;
    for o in 0..octaves.max(1) {
        sum += amp * value_noise(seed.wrapping_add(0x9E37 * o as u64 + 1), x * freq, y * freq);
        total += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / total
}

/// Billiard reflection of `p` into [lo, hi].
fn reflect(p: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.5 * (lo + hi);
    }
    let span = hi - lo;
    let q = (p - lo).rem_euclid(2.0 * span);
    if q <= span {
        lo + q
    } else {
        lo + 2.0 * span - q
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 || self.frames == 0 {
            return Err(Error::invalid("frame geometry too small"));
        }
        if self.side.0 <= 0.0 || self.side.1 < self.side.0 {
            return Err(Error::invalid("side range is empty"));
        }
        if self.contrast.0 < 0.0 || self.contrast.1 < self.contrast.0 {
            return Err(Error::invalid("contrast range is empty"));
        }
        if self.speed.1 < self.speed.0 || self.speed.0 < 0.0 {
            return Err(Error::invalid("speed range is empty"));
        }
        let margin = self.side.1 / 2.0 + self.jitter_amplitude + 2.0;
        if 2.0 * margin >= (self.width.min(self.height) - 1) as f64 {
            return Err(Error::invalid("target larger than frame"));
        }
        Ok(())
    }

    fn side_at(&self, target: &TargetParams, frame: usize) -> f64 {
        if self.frames <= 1 {
            return target.side_start;
        }
        let f = frame as f64 / (self.frames - 1) as f64;
        target.side_start + (target.side_end - target.side_start) * f
    }

    fn position_at(&self, target: &TargetParams, frame: usize) -> (f64, f64) {
        let t = frame as f64;
        let tau = std::f64::consts::TAU;
        let jitter_r = self.jitter_amplitude * (tau * t / self.jitter_period + target.phase.0).sin();
        let jitter_c = self.jitter_amplitude * (tau * t / self.jitter_period + target.phase.1).sin();
        let raw_r = target.start.0 + target.velocity.0 * t + jitter_r;
        let raw_c = target.start.1 + target.velocity.1 * t + jitter_c;
        let half = self.side_at(target, frame) / 2.0;
        (
            reflect(raw_r, half, (self.height - 1) as f64 - half),
            reflect(raw_c, half, (self.width - 1) as f64 - half),
        )
    }
}

fn draw_targets(config: &SynthConfig) -> Vec<TargetParams> {
    let mut rng = Rng::derive(config.seed, 0x7A47);
    let mut out = Vec::with_capacity(config.targets);
    for _ in 0..config.targets {
        let (side_start, side_end) = match config.size_mode {
            SizeMode::Fixed => {
                let s = rng.range_f64(config.side.0, config.side.1);
                (s, s)
            }
            SizeMode::Growing => (config.side.0, config.side.1),
        };
        let magnitude = rng.range_f64(config.contrast.0, config.contrast.1);
        let contrast =
            if rng.next_f64() < config.dark_fraction { -magnitude } else { magnitude };
        let speed = rng.range_f64(config.speed.0, config.speed.1);
        let angle = rng.range_f64(0.0, std::f64::consts::TAU);
        let velocity = (speed * angle.sin(), speed * angle.cos());
        let phase = (
            rng.range_f64(0.0, std::f64::consts::TAU),
            rng.range_f64(0.0, std::f64::consts::TAU),
        );
        let margin = config.side.1 / 2.0 + config.jitter_amplitude + 2.0;
        let start = (
            rng.range_f64(margin, (config.height - 1) as f64 - margin),
            rng.range_f64(margin, (config.width - 1) as f64 - margin),
        );
        out.push(TargetParams { start, velocity, side_start, side_end, contrast, phase });
    }
    out
}

fn coverage(shape: TargetShape, dr: f64, dc: f64, side: f64) -> f64 {
    match shape {
        TargetShape::Disc => {
            let d = (dr * dr + dc * dc).sqrt();
            (side / 2.0 - d + 0.5).clamp(0.0, 1.0)
        }
        TargetShape::Cross => {
            let axis = |d: f64, half: f64| (half - d.abs() + 0.5).clamp(0.0, 1.0);
            let bar_h = axis(dr, side / 6.0) * axis(dc, side / 2.0);
            let bar_v = axis(dr, side / 2.0) * axis(dc, side / 6.0);
            bar_h.max(bar_v)
        }
        TargetShape::Blob => {
            let sigma = side / 4.0;
            let a = (-(dr * dr + dc * dc) / (2.0 * sigma * sigma)).exp();
            if a < 0.01 {
                0.0
            } else {
                a
            }
        }
    }
}

fn render_frame(config: &SynthConfig, targets: &[TargetParams], t: usize) -> Frame {
    let w = config.width;
    let h = config.height;
    let mut data = Vec::with_capacity(w * h);
    let inv_scale = 1.0 / config.background_scale.max(1.0);
    let off_r = config.drift.0 * t as f64;
    let off_c = config.drift.1 * t as f64;
    for r in 0..h {
        let y = (r as f64 + off_r) * inv_scale;
        for c in 0..w {
            let x = (c as f64 + off_c) * inv_scale;
            let n = fractal_noise(config.seed, x, y, config.background_octaves);
            data.push(0.5 + config.background_contrast * (2.0 * n - 1.0));
        }
    }
    for target in targets {
        let side = config.side_at(target, t);
        let (pr, pc) = config.position_at(target, t);
        let reach = side / 2.0 + 1.5;
        let r0 = ((pr - reach).floor().max(0.0)) as usize;
        let r1 = ((pr + reach).ceil().min((h - 1) as f64)) as usize;
        let c0 = ((pc - reach).floor().max(0.0)) as usize;
        let c1 = ((pc + reach).ceil().min((w - 1) as f64)) as usize;
        for r in r0..=r1 {
            for c in c0..=c1 {
                let a = coverage(config.shape, r as f64 - pr, c as f64 - pc, side);
                if a > 0.0 {
                    let i = r * w + c;
                    let body = (data[i] + target.contrast).clamp(0.0, 1.0);
                    data[i] = data[i] * (1.0 - a) + body * a;
                }
            }
        }
    }
    if config.noise_sigma > 0.0 {
        let mut rng = Rng::derive(config.seed, 0xF00D_0000 + t as u64);
        for v in &mut data {
            *v = (*v + config.noise_sigma * rng.next_gaussian()).clamp(0.0, 1.0);
        }
    } else {
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Frame::new(w, h, t, data).expect("render buffer matches dimensions")
}

/// Renders the full sequence plus ground truth. Byte-deterministic given the
/// config; `threads` only affects wall-clock time.
pub fn generate_sequence(config: &SynthConfig, threads: usize) -> Result<SynthOutput> {
    config.validate()?;
    let targets = draw_targets(config);
    let frame_ids: Vec<usize> = (0..config.frames).collect();
    let frames = map_chunked(threads, &frame_ids, |&t| render_frame(config, &targets, t));
    let mut ground_truth = Vec::with_capacity(config.frames * config.targets);
    for t in 0..config.frames {
        for target in &targets {
            ground_truth.push(GroundTruthBox {
                frame: t,
                center: config.position_at(target, t),
                side: config.side_at(target, t),
            });
        }
    }
    Ok(SynthOutput { frames, ground_truth, targets })
}

/// Generator self-check: smallest |mean(target core) - mean(surrounding
/// ring)| over all ground-truth boxes. The core is a disc of radius side/6
/// (inside every shape), the ring an annulus just outside the box.
pub fn measured_contrast(output: &SynthOutput) -> f64 {
    let mut min_diff = f64::INFINITY;
    for gt in &output.ground_truth {
        let frame = &output.frames[gt.frame];
        let core_r = (gt.side / 6.0).max(1.5);
        let ring_inner = gt.side / 2.0 + 2.0;
        let ring_outer = gt.side / 2.0 + 6.0;
        let mut core_sum = 0.0;
        let mut core_n = 0.0;
        let mut ring_sum = 0.0;
        let mut ring_n = 0.0;
        let reach = ring_outer.ceil() as i64;
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let r = gt.center.0 + dr as f64;
                let c = gt.center.1 + dc as f64;
                if r < 0.0 || c < 0.0 || r > (frame.height - 1) as f64 || c > (frame.width - 1) as f64
                {
                    continue;
                }
                let d = ((dr * dr + dc * dc) as f64).sqrt();
                let v = frame.at(r.round() as usize, c.round() as usize);
                if d <= core_r {
                    core_sum += v;
                    core_n += 1.0;
                } else if d >= ring_inner && d <= ring_outer {
                    ring_sum += v;
                    ring_n += 1.0;
                }
            }
        }
        if core_n > 0.0 && ring_n > 0.0 {
            let diff = (core_sum / core_n - ring_sum / ring_n).abs();
            min_diff = min_diff.min(diff);
        }
    }
    min_diff
}

/// High contrast, calm background: the regressor and compensation benchmark.
pub fn bench_easy(seed: u64) -> SynthConfig {
    SynthConfig {
        width: 256,
        height: 256,
        frames: 60,
        targets: 2,
        shape: TargetShape::Disc,
        side: (28.0, 38.0),
        contrast: (0.55, 0.68),
        dark_fraction: 0.5,
        speed: (0.5, 1.4),
        jitter_amplitude: 0.6,
        jitter_period: 19.0,
        background_scale: 56.0,
        background_octaves: 3,
        background_contrast: 0.05,
        drift: (0.25, -0.15),
        noise_sigma: 0.004,
        size_mode: SizeMode::Fixed,
        seed,
    }
}

/// Low contrast, strong drift, heavy noise, fast targets: the end-to-end
/// detection benchmark.
pub fn bench_hard(seed: u64) -> SynthConfig {
    SynthConfig {
        width: 224,
        height: 224,
        frames: 64,
        targets: 2,
        shape: TargetShape::Disc,
        side: (26.0, 54.0),
        contrast: (0.10, 0.16),
        dark_fraction: 0.5,
        speed: (3.2, 4.6),
        jitter_amplitude: 1.4,
        jitter_period: 17.0,
        background_scale: 14.0,
        background_octaves: 4,
        background_contrast: 0.18,
        drift: (1.4, -1.0),
        noise_sigma: 0.05,
        size_mode: SizeMode::Fixed,
        seed,
    }
}

/// Collision-course analogue: stationary bearing, apparent size growing
/// across the full detectable range.
pub fn bench_collision(seed: u64) -> SynthConfig {
    SynthConfig {
        width: 176,
        height: 176,
        frames: 56,
        targets: 2,
        shape: TargetShape::Disc,
        side: (8.0, 88.0),
        contrast: (0.38, 0.52),
        dark_fraction: 0.5,
        speed: (0.0, 0.0),
        jitter_amplitude: 0.4,
        jitter_period: 29.0,
        background_scale: 44.0,
        background_octaves: 3,
        background_contrast: 0.08,
        drift: (0.2, 0.1),
        noise_sigma: 0.008,
        size_mode: SizeMode::Growing,
        seed,
    }
}

fn shape_name(shape: TargetShape) -> &'static str {
    match shape {
        TargetShape::Disc => "disc",
        TargetShape::Cross => "cross",
        TargetShape::Blob => "blob",
    }
}

impl SynthConfig {
    /// Flat `key=value` text form, one key per line.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{}={}", k, v).expect("string write");
        kv("width", self.width.to_string());
        kv("height", self.height.to_string());
        kv("frames", self.frames.to_string());
        kv("targets", self.targets.to_string());
        kv("shape", shape_name(self.shape).to_string());
        kv("side", format!("{},{}", self.side.0, self.side.1));
        kv("contrast", format!("{},{}", self.contrast.0, self.contrast.1));
        kv("dark_fraction", self.dark_fraction.to_string());
        kv("speed", format!("{},{}", self.speed.0, self.speed.1));
        kv("jitter_amplitude", self.jitter_amplitude.to_string());
        kv("jitter_period", self.jitter_period.to_string());
        kv("background_scale", self.background_scale.to_string());
        kv("background_octaves", self.background_octaves.to_string());
        kv("background_contrast", self.background_contrast.to_string());
        kv("drift", format!("{},{}", self.drift.0, self.drift.1));
        kv("noise_sigma", self.noise_sigma.to_string());
        kv(
            "size_mode",
            match self.size_mode {
                SizeMode::Fixed => "fixed".to_string(),
                SizeMode::Growing => "growing".to_string(),
            },
        );
        kv("seed", self.seed.to_string());
        s
    }

    pub fn from_config_str(path: &Path, text: &str) -> Result<Self> {
        // Start from bench-easy defaults; every key may be overridden.
        let mut cfg = bench_easy(0);
        let bad = |line: usize, msg: String| Error::format(path, format!("line {}: {}", line + 1, msg));
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(lineno, "expected key=value".to_string()))?;
            let key = key.trim();
            let value = value.trim();
            let parse_f64 = |v: &str| {
                v.parse::<f64>().map_err(|_| bad(lineno, format!("bad number '{}'", v)))
            };
            let parse_usize = |v: &str| {
                v.parse::<usize>().map_err(|_| bad(lineno, format!("bad integer '{}'", v)))
            };
            let parse_pair = |v: &str| -> Result<(f64, f64)> {
                let (a, b) =
                    v.split_once(',').ok_or_else(|| bad(lineno, "expected lo,hi".to_string()))?;
                Ok((parse_f64(a.trim())?, parse_f64(b.trim())?))
            };
            match key {
                "width" => cfg.width = parse_usize(value)?,
                "height" => cfg.height = parse_usize(value)?,
                "frames" => cfg.frames = parse_usize(value)?,
                "targets" => cfg.targets = parse_usize(value)?,
                "shape" => {
                    cfg.shape = match value {
                        "disc" => TargetShape::Disc,
                        "cross" => TargetShape::Cross,
                        "blob" => TargetShape::Blob,
                        other => return Err(bad(lineno, format!("unknown shape '{}'", other))),
                    }
                }
                "side" => cfg.side = parse_pair(value)?,
                "contrast" => cfg.contrast = parse_pair(value)?,
                "dark_fraction" => cfg.dark_fraction = parse_f64(value)?,
                "speed" => cfg.speed = parse_pair(value)?,
                "jitter_amplitude" => cfg.jitter_amplitude = parse_f64(value)?,
                "jitter_period" => cfg.jitter_period = parse_f64(value)?,
                "background_scale" => cfg.background_scale = parse_f64(value)?,
                "background_octaves" => cfg.background_octaves = parse_usize(value)?,
                "background_contrast" => cfg.background_contrast = parse_f64(value)?,
                "drift" => cfg.drift = parse_pair(value)?,
                "noise_sigma" => cfg.noise_sigma = parse_f64(value)?,
                "size_mode" => {
                    cfg.size_mode = match value {
                        "fixed" => SizeMode::Fixed,
                        "growing" => SizeMode::Growing,
                        other => return Err(bad(lineno, format!("unknown size_mode '{}'", other))),
                    }
                }
                "seed" => {
                    cfg.seed = value
                        .parse::<u64>()
                        .map_err(|_| bad(lineno, format!("bad seed '{}'", value)))?
                }
                other => return Err(bad(lineno, format!("unknown key '{}'", other))),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_config_str(path, &text)
    }
}
