//! Boosted-tree shift regressors.
//!
//! Two gradient-boosted ensembles of regression trees over HoG descriptors
//! predict, from a single patch, how far the object center sits from the
//! patch center: one model for the horizontal offset, one for the vertical.
//! Trees are fit to residuals under quadratic loss with exact greedy
//! variance-reduction splits; per-iteration loss weights reduce to a uniform
//! weight vector for this loss but stay explicit in the fitting path so other
//! losses can slot in.

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::evalkit::GroundTruthBox;
use crate::features::{hog, HogGeometry};
use crate::imagecore::{extract_scaled_patch, Frame, Patch};
use crate::motion_comp::ShiftPredictor;
use crate::rng::Rng;
use std::path::Path;

/// One training example: a patch plus the true offset of the object center
/// from the patch center, in pixels (columns = `r_h`, rows = `r_v`).
#[derive(Debug, Clone)]
pub struct ShiftSample {
    pub patch: Patch,
    pub r_h: f64,
    pub r_v: f64,
}

/// Controls for sample generation. Defaults shift boxes by up to half the
/// patch size and rescale each annotated box so the object spans the full
/// patch.
#[derive(Debug, Clone)]
pub struct SampleParams {
    pub patch_size: usize,
    /// Largest |shift| drawn per axis, in patch pixels. None = patch_size/2.
    pub max_shift: Option<f64>,
    /// Apparent object size range inside the patch, in pixels. Drawing below
    /// `patch_size` leaves context around the object, matching what pyramid
    /// levels show at detection time.
    pub apparent_size: (f64, f64),
}

impl Default for SampleParams {
    fn default() -> Self {
        SampleParams { patch_size: 40, max_shift: None, apparent_size: (40.0, 40.0) }
    }
}

/// Draws shifted training patches from annotated object boxes.
///
/// Only every second annotated frame contributes. For each kept annotation,
/// `shifts_per_box` patches are extracted: the annotated box is rescaled so
/// the object spans the drawn apparent size, the patch center is displaced by
/// a uniform shift, and the negated shift becomes the regression target.
/// Deterministic given the seed; annotations outside their frame are skipped
/// with a warning on stderr.
pub fn make_shift_samples(
    annotations: &[GroundTruthBox],
    frames: &[Frame],
    seed: u64,
    shifts_per_box: usize,
    params: &SampleParams,
) -> Result<Vec<ShiftSample>> {
    if params.patch_size == 0 {
        return Err(Error::invalid("patch size must be positive"));
    }
    let max_shift = params.max_shift.unwrap_or(params.patch_size as f64 / 2.0);
    if max_shift < 0.0 || max_shift > params.patch_size as f64 / 2.0 {
        return Err(Error::invalid("max_shift must be in [0, patch_size/2]"));
    }
    if params.apparent_size.0 <= 0.0 || params.apparent_size.1 < params.apparent_size.0 {
        return Err(Error::invalid("apparent_size range is empty"));
    }

    // Every second frame of the annotated set, in temporal order.
    let mut annotated_frames: Vec<usize> = annotations.iter().map(|a| a.frame).collect();
    annotated_frames.sort_unstable();
    annotated_frames.dedup();
    let kept: std::collections::HashSet<usize> =
        annotated_frames.iter().step_by(2).copied().collect();

    let mut rng = Rng::derive(seed, 0x5a4d);
    let mut samples = Vec::new();
    for ann in annotations {
        if !kept.contains(&ann.frame) {
            continue;
        }
        if ann.frame >= frames.len() {
            eprintln!("warning: annotation references missing frame {}, skipped", ann.frame);
            continue;
        }
        let frame = &frames[ann.frame];
        let inside = ann.center.0 >= 0.0
            && ann.center.1 >= 0.0
            && ann.center.0 <= (frame.height - 1) as f64
            && ann.center.1 <= (frame.width - 1) as f64
            && ann.side > 0.0;
        if !inside {
            eprintln!(
                "warning: annotation at frame {} lies outside the frame, skipped",
                ann.frame
            );
            continue;
        }
        for _ in 0..shifts_per_box {
            let d_col = rng.range_f64(-max_shift, max_shift);
            let d_row = rng.range_f64(-max_shift, max_shift);
            let apparent = rng.range_f64(params.apparent_size.0, params.apparent_size.1);
            // One patch pixel covers side/apparent source pixels.
            let px = ann.side / apparent;
            let src_side = params.patch_size as f64 * px;
            let center = (ann.center.0 + d_row * px, ann.center.1 + d_col * px);
            let patch = extract_scaled_patch(
                frame,
                center,
                (src_side, src_side),
                (params.patch_size, params.patch_size),
            )?;
            samples.push(ShiftSample { patch, r_h: -d_col, r_v: -d_row });
        }
    }
    Ok(samples)
}

/// Node of an axis-aligned regression tree, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf { value: f64 },
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
}

/// Flat binary regression tree over descriptor components.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, threshold, left, right } => {
                    idx = if x[*feature as usize] <= *threshold { *left } else { *right }
                        as usize;
                }
            }
        }
    }
}

/// Training controls. Defaults meet the shift-accuracy targets on the
/// synthetic benchmarks in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressorConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub min_leaf: usize,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        RegressorConfig { rounds: 200, max_depth: 4, shrinkage: 0.1, min_leaf: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub base_value: f64,
    /// `(weight, tree)` pairs; weights are 1.0 with the shrinkage folded in.
    pub trees: Vec<(f64, RegressionTree)>,
}

impl Ensemble {
    fn predict(&self, x: &[f64], shrinkage: f64) -> f64 {
        let mut acc = self.base_value;
        for (w, tree) in &self.trees {
            acc += shrinkage * w * tree.evaluate(x);
        }
        acc
    }
}

/// The trained pair of ensembles plus the descriptor geometry they expect.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftRegressor {
    pub patch_width: usize,
    pub patch_height: usize,
    pub geometry: HogGeometry,
    pub shrinkage: f64,
    pub config: RegressorConfig,
    pub horizontal: Ensemble,
    pub vertical: Ensemble,
}

/// Per-round mean squared training error for each axis; index 0 is the loss
/// of the base value alone.
#[derive(Debug, Clone)]
pub struct RegressorReport {
    pub mse_horizontal: Vec<f64>,
    pub mse_vertical: Vec<f64>,
}

/// Feature matrix in column-major order for fast split scans.
struct FeatureMatrix {
    n: usize,
    d: usize,
    columns: Vec<f64>,
}

impl FeatureMatrix {
    #[inline]
    fn at(&self, sample: usize, feature: usize) -> f64 {
        self.columns[feature * self.n + sample]
    }
}

struct TreeFitter<'a> {
    features: &'a FeatureMatrix,
    /// Per feature, sample indices sorted by value (ties by index).
    presorted: &'a [Vec<u32>],
    min_leaf: usize,
    max_depth: usize,
}

const SPLIT_GAIN_EPS: f64 = 1e-12;

#[derive(Clone, Copy)]
struct NodeStats {
    weight: f64,
    weighted_sum: f64,
    count: usize,
}

#[derive(Clone, Copy)]
struct BestSplit {
    gain: f64,
    feature: u32,
    threshold: f64,
}

impl TreeFitter<'_> {
    /// Exact greedy least-squares fit to `residuals`. Also returns the fitted
    /// tree's prediction for every training sample.
    fn fit(&self, residuals: &[f64], weights: &[f64]) -> (RegressionTree, Vec<f64>) {
        let n = residuals.len();
        let mut nodes: Vec<TreeNode> = Vec::new();
        // membership[i] = current node of sample i.
        let mut membership = vec![0u32; n];

        let root_stats = node_stats(residuals, weights, &membership, 0);
        nodes.push(TreeNode::Leaf { value: leaf_value(&root_stats) });
        let mut active: Vec<u32> = vec![0];

        for _depth in 0..self.max_depth {
            if active.is_empty() {
                break;
            }
            // Stats per active node.
            let mut slot_of = std::collections::HashMap::new();
            for (slot, &node) in active.iter().enumerate() {
                slot_of.insert(node, slot);
            }
            let mut stats = vec![NodeStats { weight: 0.0, weighted_sum: 0.0, count: 0 }; active.len()];
            for i in 0..n {
                if let Some(&slot) = slot_of.get(&membership[i]) {
                    stats[slot].weight += weights[i];
                    stats[slot].weighted_sum += weights[i] * residuals[i];
                    stats[slot].count += 1;
                }
            }
            let mut best: Vec<Option<BestSplit>> = vec![None; active.len()];

            // One pass per feature over the presorted order covers all nodes.
            let mut scan: Vec<(f64, f64, f64, usize)> = Vec::with_capacity(active.len());
            for f in 0..self.features.d {
                scan.clear();
                scan.resize(active.len(), (f64::NAN, 0.0, 0.0, 0)); // (prev value, w_l, s_l, n_l)
                for &iu in &self.presorted[f] {
                    let i = iu as usize;
                    let slot = match slot_of.get(&membership[i]) {
                        Some(&s) => s,
                        None => continue,
                    };
                    let v = self.features.at(i, f);
                    let (prev, w_l, s_l, n_l) = scan[slot];
                    if n_l > 0 && v > prev {
                        let total = stats[slot];
                        let n_r = total.count - n_l;
                        if n_l >= self.min_leaf && n_r >= self.min_leaf {
                            let w_r = total.weight - w_l;
                            let s_r = total.weighted_sum - s_l;
                            let gain = score(s_l, w_l) + score(s_r, w_r);
                            let threshold = 0.5 * (prev + v);
                            let better = match best[slot] {
                                None => true,
                                Some(b) => gain > b.gain,
                            };
                            if better {
                                best[slot] =
                                    Some(BestSplit { gain, feature: f as u32, threshold });
                            }
                        }
                    }
                    scan[slot] =
                        (v, w_l + weights[i], s_l + weights[i] * residuals[i], n_l + 1);
                }
            }

            // Apply the winning splits; children become the next active set.
            let mut next_active = Vec::new();
            let mut split_info: std::collections::HashMap<u32, (u32, f64, u32, u32)> =
                std::collections::HashMap::new();
            for (slot, &node) in active.iter().enumerate() {
                let parent_score = score(stats[slot].weighted_sum, stats[slot].weight);
                let split = match best[slot] {
                    Some(b) if b.gain > parent_score + SPLIT_GAIN_EPS => b,
                    _ => continue,
                };
                let left = nodes.len() as u32;
                let right = left + 1;
                nodes.push(TreeNode::Leaf { value: 0.0 });
                nodes.push(TreeNode::Leaf { value: 0.0 });
                nodes[node as usize] = TreeNode::Split {
                    feature: split.feature,
                    threshold: split.threshold,
                    left,
                    right,
                };
                split_info.insert(node, (split.feature, split.threshold, left, right));
                next_active.push(left);
                next_active.push(right);
            }
            if split_info.is_empty() {
                break;
            }
            // Reassign members and set child leaf values.
            let mut child_stats: std::collections::HashMap<u32, NodeStats> =
                std::collections::HashMap::new();
            for i in 0..n {
                if let Some(&(f, thr, left, right)) = split_info.get(&membership[i]) {
                    let child =
                        if self.features.at(i, f as usize) <= thr { left } else { right };
                    membership[i] = child;
                    let e = child_stats
                        .entry(child)
                        .or_insert(NodeStats { weight: 0.0, weighted_sum: 0.0, count: 0 });
                    e.weight += weights[i];
                    e.weighted_sum += weights[i] * residuals[i];
                    e.count += 1;
                }
            }
            for (&node, s) in &child_stats {
                nodes[node as usize] = TreeNode::Leaf { value: leaf_value(s) };
            }
            active = next_active;
        }

        let tree = RegressionTree { nodes };
        let preds: Vec<f64> = membership
            .iter()
            .map(|&node| match tree.nodes[node as usize] {
                TreeNode::Leaf { value } => value,
                _ => unreachable!("membership must end at a leaf"),
            })
            .collect();
        (tree, preds)
    }
}

#[inline]
fn score(s: f64, w: f64) -> f64 {
    if w > 0.0 {
        s * s / w
    } else {
        0.0
    }
}

fn node_stats(residuals: &[f64], weights: &[f64], membership: &[u32], node: u32) -> NodeStats {
    let mut st = NodeStats { weight: 0.0, weighted_sum: 0.0, count: 0 };
    for i in 0..residuals.len() {
        if membership[i] == node {
            st.weight += weights[i];
            st.weighted_sum += weights[i] * residuals[i];
            st.count += 1;
        }
    }
    st
}

fn leaf_value(stats: &NodeStats) -> f64 {
    if stats.weight > 0.0 {
        stats.weighted_sum / stats.weight
    } else {
        0.0
    }
}

fn boost_axis(
    features: &FeatureMatrix,
    presorted: &[Vec<u32>],
    targets: &[f64],
    config: &RegressorConfig,
) -> (Ensemble, Vec<f64>) {
    let n = targets.len();
    // Quadratic loss: the per-iteration weights from differentiating the loss
    // are uniform over residuals.
    let weights = vec![1.0; n];
    let base = targets.iter().sum::<f64>() / n as f64;
    let mut preds = vec![base; n];
    let mut residuals = vec![0.0; n];
    let fitter = TreeFitter {
        features,
        presorted,
        min_leaf: config.min_leaf.max(1),
        max_depth: config.max_depth,
    };
    let mut losses = Vec::with_capacity(config.rounds + 1);
    let mse = |preds: &[f64]| -> f64 {
        targets.iter().zip(preds).map(|(t, p)| (t - p) * (t - p)).sum::<f64>() / n as f64
    };
    losses.push(mse(&preds));
    let mut trees = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        for i in 0..n {
            residuals[i] = targets[i] - preds[i];
        }
        let (tree, tree_preds) = fitter.fit(&residuals, &weights);
        for i in 0..n {
            preds[i] += config.shrinkage * tree_preds[i];
        }
        trees.push((1.0, tree));
        losses.push(mse(&preds));
    }
    (Ensemble { base_value: base, trees }, losses)
}

/// Trains the horizontal and vertical ensembles independently on the same
/// HoG descriptors.
pub fn train_regressor(
    samples: &[ShiftSample],
    config: &RegressorConfig,
) -> Result<(ShiftRegressor, RegressorReport)> {
    if samples.len() < 2 {
        return Err(Error::invalid("need at least 2 samples"));
    }
    if config.rounds == 0 {
        return Err(Error::invalid("rounds must be at least 1"));
    }
    if !(config.shrinkage > 0.0 && config.shrinkage <= 1.0) {
        return Err(Error::invalid("shrinkage must be in (0, 1]"));
    }
    let geometry = HogGeometry::default();
    let pw = samples[0].patch.width;
    let ph = samples[0].patch.height;
    let d = geometry.descriptor_len(pw, ph)?;
    let n = samples.len();
    let mut columns = vec![0.0; n * d];
    for (i, s) in samples.iter().enumerate() {
        if s.patch.width != pw || s.patch.height != ph {
            return Err(Error::geometry("samples have mixed patch sizes"));
        }
        let desc = hog(&s.patch, &geometry)?;
        for f in 0..d {
            columns[f * n + i] = desc.values[f];
        }
    }
    let features = FeatureMatrix { n, d, columns };
    let mut presorted: Vec<Vec<u32>> = Vec::with_capacity(d);
    for f in 0..d {
        let mut idx: Vec<u32> = (0..n as u32).collect();
        idx.sort_by(|&a, &b| {
            features
                .at(a as usize, f)
                .partial_cmp(&features.at(b as usize, f))
                .unwrap()
                .then(a.cmp(&b))
        });
        presorted.push(idx);
    }
    let targets_h: Vec<f64> = samples.iter().map(|s| s.r_h).collect();
    let targets_v: Vec<f64> = samples.iter().map(|s| s.r_v).collect();
    let (horizontal, mse_horizontal) = boost_axis(&features, &presorted, &targets_h, config);
    let (vertical, mse_vertical) = boost_axis(&features, &presorted, &targets_v, config);
    Ok((
        ShiftRegressor {
            patch_width: pw,
            patch_height: ph,
            geometry,
            shrinkage: config.shrinkage,
            config: *config,
            horizontal,
            vertical,
        },
        RegressorReport { mse_horizontal, mse_vertical },
    ))
}

/// Predicted `(sh_h, sh_v)` offset of the object from the patch center,
/// clamped to half the patch size per axis.
pub fn predict_shift(model: &ShiftRegressor, patch: &Patch) -> Result<(f64, f64)> {
    if patch.width != model.patch_width || patch.height != model.patch_height {
        return Err(Error::geometry(format!(
            "patch {}x{} does not match model geometry {}x{}",
            patch.width, patch.height, model.patch_width, model.patch_height
        )));
    }
    let desc = hog(patch, &model.geometry)?;
    let half_w = model.patch_width as f64 / 2.0;
    let half_h = model.patch_height as f64 / 2.0;
    let sh_h = model.horizontal.predict(&desc.values, model.shrinkage).clamp(-half_w, half_w);
    let sh_v = model.vertical.predict(&desc.values, model.shrinkage).clamp(-half_h, half_h);
    Ok((sh_h, sh_v))
}

impl ShiftPredictor for ShiftRegressor {
    fn patch_size(&self) -> (usize, usize) {
        (self.patch_width, self.patch_height)
    }

    fn predict(&self, patch: &Patch) -> (f64, f64) {
        predict_shift(self, patch).expect("patch geometry checked by caller")
    }
}

const MAGIC: &[u8; 4] = b"SWR1";
const VERSION: u32 = 1;

fn write_ensemble(w: &mut Writer, e: &Ensemble) {
    w.f64(e.base_value);
    w.u32(e.trees.len() as u32);
    for (weight, tree) in &e.trees {
        w.f64(*weight);
        w.u32(tree.nodes.len() as u32);
        for node in &tree.nodes {
            match node {
                TreeNode::Leaf { value } => {
                    w.u8(0);
                    w.f64(*value);
                }
                TreeNode::Split { feature, threshold, left, right } => {
                    w.u8(1);
                    w.u32(*feature);
                    w.f64(*threshold);
                    w.u32(*left);
                    w.u32(*right);
                }
            }
        }
    }
}

fn read_ensemble(r: &mut Reader) -> Result<Ensemble> {
    let base_value = r.f64()?;
    let n_trees = r.u32()? as usize;
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let weight = r.f64()?;
        let n_nodes = r.u32()? as usize;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            match r.u8()? {
                0 => nodes.push(TreeNode::Leaf { value: r.f64()? }),
                1 => nodes.push(TreeNode::Split {
                    feature: r.u32()?,
                    threshold: r.f64()?,
                    left: r.u32()?,
                    right: r.u32()?,
                }),
                tag => {
                    return Err(Error::invalid(format!("unknown tree node tag {}", tag)));
                }
            }
        }
        trees.push((weight, RegressionTree { nodes }));
    }
    Ok(Ensemble { base_value, trees })
}

impl ShiftRegressor {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u32(self.patch_width as u32);
        w.u32(self.patch_height as u32);
        w.u32(self.geometry.cell_size as u32);
        w.u32(self.geometry.block_cells as u32);
        w.u32(self.geometry.block_stride as u32);
        w.u32(self.geometry.bins as u32);
        w.f64(self.shrinkage);
        w.u32(self.config.rounds as u32);
        w.u32(self.config.max_depth as u32);
        w.u32(self.config.min_leaf as u32);
        write_ensemble(&mut w, &self.horizontal);
        write_ensemble(&mut w, &self.vertical);
        w.into_bytes()
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(path, bytes, MAGIC, VERSION)?;
        let patch_width = r.u32()? as usize;
        let patch_height = r.u32()? as usize;
        let geometry = HogGeometry {
            cell_size: r.u32()? as usize,
            block_cells: r.u32()? as usize,
            block_stride: r.u32()? as usize,
            bins: r.u32()? as usize,
        };
        let shrinkage = r.f64()?;
        let config = RegressorConfig {
            rounds: r.u32()? as usize,
            max_depth: r.u32()? as usize,
            shrinkage,
            min_leaf: r.u32()? as usize,
        };
        let horizontal = read_ensemble(&mut r)?;
        let vertical = read_ensemble(&mut r)?;
        r.finish()?;
        Ok(ShiftRegressor {
            patch_width,
            patch_height,
            geometry,
            shrinkage,
            config,
            horizontal,
            vertical,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(path, &bytes)
    }
}
