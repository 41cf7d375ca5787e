//! AdaBoost cube classifier.
//!
//! Discrete AdaBoost over thresholded scalar features of a cube. The default
//! feature is the normalized gradient energy E of a random box and
//! orientation; the alternative mode thresholds single components of a 3-D
//! HoG descriptor. A weak learner fires when its feature crosses its
//! threshold; a polarity bit admits features whose energy is lower for
//! positives. The ensemble score is the fired weight fraction, so it lives in
//! [0, 1] with 0.5 at the classic AdaBoost decision boundary.

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::features::{build_channels, gradient_energy, hog3d, CubeBox, HogGeometry};
use crate::motion_comp::{CubeDims, StCube};
use crate::parallel::map_chunked;
use crate::rng::Rng;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    GradientEnergy,
    Hog3d,
}

/// The scalar feature a weak learner thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeakFeature {
    /// Gradient energy of one box and orientation.
    Energy(CubeBox),
    /// One component of the cube's 3-D HoG descriptor.
    HogComponent(u32),
}

/// Thresholded single-feature classifier. Fires (predicts positive) when
/// `polarity = +1` and the feature exceeds `threshold`, or `polarity = -1`
/// and it does not.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakLearner {
    pub feature: WeakFeature,
    pub threshold: f64,
    pub polarity: i8,
    pub weight: f64,
}

impl WeakLearner {
    #[inline]
    fn fires(&self, value: f64) -> bool {
        if self.polarity >= 0 {
            value > self.threshold
        } else {
            value <= self.threshold
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubeClassifier {
    pub learners: Vec<WeakLearner>,
    pub feature_mode: FeatureMode,
    pub dims: CubeDims,
    /// Orientation channels for the energy features.
    pub channel_bins: usize,
    /// Descriptor geometry for the 3-D HoG mode.
    pub hog_geometry: HogGeometry,
}

#[derive(Debug, Clone)]
pub struct AdaBoostConfig {
    pub rounds: usize,
    pub pool_size: usize,
    pub seed: u64,
    pub feature_mode: FeatureMode,
    pub min_box_side: usize,
    pub channel_bins: usize,
    pub threads: usize,
}

impl Default for AdaBoostConfig {
    fn default() -> Self {
        AdaBoostConfig {
            rounds: 100,
            pool_size: 2000,
            seed: 0,
            feature_mode: FeatureMode::GradientEnergy,
            min_box_side: 4,
            channel_bins: crate::features::DEFAULT_CHANNEL_BINS,
            threads: 1,
        }
    }
}

/// Per-round diagnostics.
#[derive(Debug, Clone)]
pub struct BoostReport {
    /// Weighted error of the learner selected each round.
    pub weighted_errors: Vec<f64>,
    /// Training error of the ensemble after each round (margin <= 0 counts
    /// as a mistake).
    pub training_errors: Vec<f64>,
    /// True when a round found no learner better than chance and training
    /// stopped before `rounds`.
    pub halted_early: bool,
}

#[derive(Debug, Clone, Copy)]
enum Candidate {
    Box(CubeBox),
    Component(u32),
}

fn draw_candidates(
    rng: &mut Rng,
    config: &AdaBoostConfig,
    dims: &CubeDims,
    descriptor_len: usize,
) -> Vec<Candidate> {
    let mut out = Vec::with_capacity(config.pool_size);
    for _ in 0..config.pool_size {
        match config.feature_mode {
            FeatureMode::GradientEnergy => {
                let min = config.min_box_side;
                let x0 = rng.below((dims.s_x - min + 1) as u64) as usize;
                let w = min + rng.below((dims.s_x - x0 - min + 1) as u64) as usize;
                let y0 = rng.below((dims.s_y - min + 1) as u64) as usize;
                let h = min + rng.below((dims.s_y - y0 - min + 1) as u64) as usize;
                let t0 = rng.below(dims.s_t as u64) as usize;
                let tl = 1 + rng.below((dims.s_t - t0) as u64) as usize;
                let o = rng.below(config.channel_bins as u64) as usize;
                out.push(Candidate::Box(CubeBox {
                    x0,
                    x1: x0 + w,
                    y0,
                    y1: y0 + h,
                    t0,
                    t1: t0 + tl,
                    orientation: o,
                }));
            }
            FeatureMode::Hog3d => {
                out.push(Candidate::Component(rng.below(descriptor_len as u64) as u32));
            }
        }
    }
    out
}

struct ScanResult {
    error: f64,
    threshold: f64,
    polarity: i8,
}

/// Best (threshold, polarity) for one candidate given current weights.
/// Thresholds are midpoints of consecutive distinct sorted values. Weights
/// must sum to 1. Candidates whose values are all equal fall back to a
/// chance-level stump so the degenerate guard can observe them.
fn scan_candidate(values: &[f64], labels: &[i8], weights: &[f64]) -> ScanResult {
    let n = values.len();
    let mut idx: Vec<u32> = (0..n as u32).collect();
    idx.sort_by(|&a, &b| {
        values[a as usize].partial_cmp(&values[b as usize]).unwrap().then(a.cmp(&b))
    });
    let neg_weight: f64 =
        labels.iter().zip(weights).filter(|(l, _)| **l < 0).map(|(_, w)| *w).sum();
    // polarity +1, threshold below everything: all fire, error = negatives.
    let mut err_plus = neg_weight;
    let mut best: Option<ScanResult> = None;
    for k in 0..n {
        let i = idx[k] as usize;
        // Crossing sample i to the non-firing side.
        if labels[i] > 0 {
            err_plus += weights[i];
        } else {
            err_plus -= weights[i];
        }
        if k + 1 < n {
            let v = values[i];
            let v_next = values[idx[k + 1] as usize];
            if v_next > v {
                let threshold = 0.5 * (v + v_next);
                // Running subtraction can drift a hair below zero.
                let err_plus = err_plus.clamp(0.0, 1.0);
                for (error, polarity) in [(err_plus, 1i8), (1.0 - err_plus, -1i8)] {
                    let better = match &best {
                        None => true,
                        Some(b) => error < b.error,
                    };
                    if better {
                        best = Some(ScanResult { error, threshold, polarity });
                    }
                }
            }
        }
    }
    best.unwrap_or(ScanResult { error: 0.5, threshold: 0.5, polarity: 1 })
}

const DEGENERATE_ERROR: f64 = 0.5 - 1e-12;
const ERROR_CLAMP: f64 = 1e-10;

/// Classic discrete AdaBoost over randomly drawn candidate features.
/// Deterministic given the seed and thread-count independent.
pub fn train_adaboost(
    cubes: &[StCube],
    labels: &[i8],
    config: &AdaBoostConfig,
) -> Result<(CubeClassifier, BoostReport)> {
    if cubes.is_empty() || cubes.len() != labels.len() {
        return Err(Error::invalid("cubes and labels must be non-empty and aligned"));
    }
    if labels.iter().any(|l| *l != 1 && *l != -1) {
        return Err(Error::invalid("labels must be +1 or -1"));
    }
    if !labels.iter().any(|l| *l > 0) || !labels.iter().any(|l| *l < 0) {
        return Err(Error::invalid("both classes must be present"));
    }
    if config.rounds == 0 || config.pool_size == 0 {
        return Err(Error::invalid("rounds and pool_size must be positive"));
    }
    let dims = cubes[0].dims;
    if cubes.iter().any(|c| c.dims != dims) {
        return Err(Error::geometry("training cubes have mixed dimensions"));
    }
    if dims.s_x < config.min_box_side || dims.s_y < config.min_box_side {
        return Err(Error::invalid("cube smaller than the minimum box side"));
    }
    let hog_geometry = HogGeometry::default();

    // Hog3d descriptors are small; compute them once.
    let descriptors: Vec<Vec<f64>> = match config.feature_mode {
        FeatureMode::Hog3d => {
            let idx: Vec<usize> = (0..cubes.len()).collect();
            let rows = map_chunked(config.threads, &idx, |&i| {
                hog3d(&cubes[i], &hog_geometry).map(|d| d.values)
            });
            rows.into_iter().collect::<Result<Vec<_>>>()?
        }
        FeatureMode::GradientEnergy => Vec::new(),
    };
    let descriptor_len = descriptors.first().map(|d| d.len()).unwrap_or(1);

    let n = cubes.len();
    let mut weights = vec![1.0 / n as f64; n];
    let mut margins = vec![0.0; n];
    let mut learners = Vec::new();
    let mut report =
        BoostReport { weighted_errors: Vec::new(), training_errors: Vec::new(), halted_early: false };
    let cube_idx: Vec<usize> = (0..n).collect();

    for round in 0..config.rounds {
        let mut rng = Rng::derive(config.seed, round as u64);
        let candidates = draw_candidates(&mut rng, config, &dims, descriptor_len);

        // values[cand][cube]
        let values: Vec<Vec<f64>> = match config.feature_mode {
            FeatureMode::GradientEnergy => {
                let per_cube: Vec<Result<Vec<f64>>> =
                    map_chunked(config.threads, &cube_idx, |&i| {
                        let vol = build_channels(&cubes[i], config.channel_bins)?;
                        candidates
                            .iter()
                            .map(|c| match c {
                                Candidate::Box(b) => gradient_energy(&vol, b),
                                Candidate::Component(_) => unreachable!(),
                            })
                            .collect()
                    });
                let per_cube = per_cube.into_iter().collect::<Result<Vec<_>>>()?;
                let mut m = vec![vec![0.0; n]; candidates.len()];
                for (i, row) in per_cube.iter().enumerate() {
                    for (c, v) in row.iter().enumerate() {
                        m[c][i] = *v;
                    }
                }
                m
            }
            FeatureMode::Hog3d => candidates
                .iter()
                .map(|c| match c {
                    Candidate::Component(f) => {
                        descriptors.iter().map(|d| d[*f as usize]).collect()
                    }
                    Candidate::Box(_) => unreachable!(),
                })
                .collect(),
        };

        let mut best_cand = 0usize;
        let mut best = ScanResult { error: f64::INFINITY, threshold: 0.5, polarity: 1 };
        for (c, vals) in values.iter().enumerate() {
            let r = scan_candidate(vals, labels, &weights);
            if r.error < best.error {
                best = r;
                best_cand = c;
            }
        }

        let feature = match candidates[best_cand] {
            Candidate::Box(b) => WeakFeature::Energy(b),
            Candidate::Component(f) => WeakFeature::HogComponent(f),
        };
        let degenerate = best.error >= DEGENERATE_ERROR;
        let alpha = if degenerate {
            0.0
        } else {
            let e = best.error.clamp(ERROR_CLAMP, 1.0 - ERROR_CLAMP);
            0.5 * ((1.0 - e) / e).ln()
        };
        let learner =
            WeakLearner { feature, threshold: best.threshold, polarity: best.polarity, weight: alpha };

        // Ensemble bookkeeping with the just-selected learner.
        let vals = &values[best_cand];
        for i in 0..n {
            let predicted: f64 = if learner.fires(vals[i]) { 1.0 } else { -1.0 };
            margins[i] += alpha * predicted;
            weights[i] *= (-alpha * labels[i] as f64 * predicted).exp();
        }
        let wsum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= wsum);
        let train_err = (0..n)
            .filter(|&i| margins[i] * labels[i] as f64 <= 0.0)
            .count() as f64
            / n as f64;

        learners.push(learner);
        report.weighted_errors.push(best.error);
        report.training_errors.push(train_err);

        if degenerate {
            eprintln!(
                "warning: boosting round {} found no learner better than chance, stopping",
                round + 1
            );
            report.halted_early = true;
            break;
        }
    }

    Ok((
        CubeClassifier {
            learners,
            feature_mode: config.feature_mode,
            dims,
            channel_bins: config.channel_bins,
            hog_geometry,
        },
        report,
    ))
}

/// Ensemble score in [0, 1]: fired positive weight over total positive
/// weight. 1.0 when every learner fires, 0.0 when none does.
pub fn score_cube(model: &CubeClassifier, cube: &StCube) -> Result<f64> {
    if cube.dims != model.dims {
        return Err(Error::geometry(format!(
            "cube dims {:?} do not match model dims {:?}",
            cube.dims, model.dims
        )));
    }
    if model.learners.is_empty() {
        return Err(Error::invalid("classifier has no learners"));
    }
    let mut fired = 0.0;
    let mut total = 0.0;
    match model.feature_mode {
        FeatureMode::GradientEnergy => {
            let vol = build_channels(cube, model.channel_bins)?;
            for l in &model.learners {
                let value = match &l.feature {
                    WeakFeature::Energy(b) => gradient_energy(&vol, b)?,
                    WeakFeature::HogComponent(_) => {
                        return Err(Error::invalid("hog component learner in energy model"));
                    }
                };
                total += l.weight.max(0.0);
                if l.fires(value) {
                    fired += l.weight.max(0.0);
                }
            }
        }
        FeatureMode::Hog3d => {
            let desc = hog3d(cube, &model.hog_geometry)?;
            for l in &model.learners {
                let value = match &l.feature {
                    WeakFeature::HogComponent(f) => desc.values[*f as usize],
                    WeakFeature::Energy(_) => {
                        return Err(Error::invalid("energy learner in hog3d model"));
                    }
                };
                total += l.weight.max(0.0);
                if l.fires(value) {
                    fired += l.weight.max(0.0);
                }
            }
        }
    }
    if total <= 0.0 {
        return Ok(0.0);
    }
    Ok(fired / total)
}

const MAGIC: &[u8; 4] = b"SWC1";
const VERSION: u32 = 1;

impl CubeClassifier {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u8(match self.feature_mode {
            FeatureMode::GradientEnergy => 0,
            FeatureMode::Hog3d => 1,
        });
        w.u32(self.dims.s_x as u32);
        w.u32(self.dims.s_y as u32);
        w.u32(self.dims.s_t as u32);
        w.u32(self.channel_bins as u32);
        w.u32(self.hog_geometry.cell_size as u32);
        w.u32(self.hog_geometry.block_cells as u32);
        w.u32(self.hog_geometry.block_stride as u32);
        w.u32(self.hog_geometry.bins as u32);
        w.u32(self.learners.len() as u32);
        for l in &self.learners {
            match &l.feature {
                WeakFeature::Energy(b) => {
                    w.u8(0);
                    w.u32(b.x0 as u32);
                    w.u32(b.x1 as u32);
                    w.u32(b.y0 as u32);
                    w.u32(b.y1 as u32);
                    w.u32(b.t0 as u32);
                    w.u32(b.t1 as u32);
                    w.u32(b.orientation as u32);
                }
                WeakFeature::HogComponent(f) => {
                    w.u8(1);
                    w.u32(*f);
                }
            }
            w.f64(l.threshold);
            w.u8(if l.polarity >= 0 { 1 } else { 0 });
            w.f64(l.weight);
        }
        w.into_bytes()
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(path, bytes, MAGIC, VERSION)?;
        let feature_mode = match r.u8()? {
            0 => FeatureMode::GradientEnergy,
            1 => FeatureMode::Hog3d,
            m => return Err(Error::format(path, format!("unknown feature mode {}", m))),
        };
        let dims =
            CubeDims::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let channel_bins = r.u32()? as usize;
        let hog_geometry = HogGeometry {
            cell_size: r.u32()? as usize,
            block_cells: r.u32()? as usize,
            block_stride: r.u32()? as usize,
            bins: r.u32()? as usize,
        };
        let n = r.u32()? as usize;
        let mut learners = Vec::with_capacity(n);
        for _ in 0..n {
            let feature = match r.u8()? {
                0 => WeakFeature::Energy(CubeBox {
                    x0: r.u32()? as usize,
                    x1: r.u32()? as usize,
                    y0: r.u32()? as usize,
                    y1: r.u32()? as usize,
                    t0: r.u32()? as usize,
                    t1: r.u32()? as usize,
                    orientation: r.u32()? as usize,
                }),
                1 => WeakFeature::HogComponent(r.u32()?),
                t => return Err(Error::format(path, format!("unknown feature tag {}", t))),
            };
            let threshold = r.f64()?;
            let polarity = if r.u8()? == 1 { 1 } else { -1 };
            let weight = r.f64()?;
            learners.push(WeakLearner { feature, threshold, polarity, weight });
        }
        r.finish()?;
        Ok(CubeClassifier { learners, feature_mode, dims, channel_bins, hog_geometry })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(path, &bytes)
    }
}
