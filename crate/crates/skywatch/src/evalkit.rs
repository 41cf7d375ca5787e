//! Ground-truth matching, precision-recall curves and Average Precision.
//!
//! Matching protocol: detections are ranked by descending score (ties broken
//! by frame, then center, then side). Each detection greedily claims the
//! unmatched ground-truth box of its frame with the highest IoU, provided
//! IoU >= threshold; every ground truth is matched at most once. Precision
//! is TP / detections kept, recall is TP / |GT|, and AveP is the plain step
//! integral of precision over recall.

use crate::detector::Detection;
use crate::error::{Error, Result};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

/// An annotated object box: square of `side` pixels centered at `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthBox {
    pub frame: usize,
    /// `(row, col)` center.
    pub center: (f64, f64),
    pub side: f64,
}

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Intersection-over-union of two axis-aligned square boxes given by center
/// and side.
pub fn box_iou(center_a: (f64, f64), side_a: f64, center_b: (f64, f64), side_b: f64) -> f64 {
    let half_a = side_a / 2.0;
    let half_b = side_b / 2.0;
    let inter_h = (center_a.0 + half_a).min(center_b.0 + half_b)
        - (center_a.0 - half_a).max(center_b.0 - half_b);
    let inter_w = (center_a.1 + half_a).min(center_b.1 + half_b)
        - (center_a.1 - half_a).max(center_b.1 - half_b);
    if inter_h <= 0.0 || inter_w <= 0.0 {
        return 0.0;
    }
    let inter = inter_h * inter_w;
    let union = side_a * side_a + side_b * side_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Canonical evaluation order: descending score, ties by frame, center, side.
pub(crate) fn rank_order(detections: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        let da = &detections[a];
        let db = &detections[b];
        db.score
            .partial_cmp(&da.score)
            .unwrap()
            .then(da.frame.cmp(&db.frame))
            .then(da.center.0.partial_cmp(&db.center.0).unwrap())
            .then(da.center.1.partial_cmp(&db.center.1).unwrap())
            .then(da.side.partial_cmp(&db.side).unwrap())
    });
    order
}

/// Outcome of greedy matching.
#[derive(Debug, Clone)]
pub struct MatchResult {
    /// Detection indices in evaluation order.
    pub order: Vec<usize>,
    /// Aligned with `order`: true positive?
    pub is_tp: Vec<bool>,
    /// Aligned with `order`: index of the claimed ground truth, if any.
    pub matched_gt: Vec<Option<usize>>,
    /// Per ground truth: was it claimed?
    pub gt_matched: Vec<bool>,
}

/// Labels every detection TP/FP against the ground truth.
pub fn match_detections(
    detections: &[Detection],
    ground_truths: &[GroundTruthBox],
    iou_threshold: f64,
) -> MatchResult {
    let order = rank_order(detections);
    let mut by_frame: HashMap<usize, Vec<usize>> = HashMap::new();
    for (g, gt) in ground_truths.iter().enumerate() {
        by_frame.entry(gt.frame).or_default().push(g);
    }
    let mut gt_matched = vec![false; ground_truths.len()];
    let mut is_tp = Vec::with_capacity(order.len());
    let mut matched_gt = Vec::with_capacity(order.len());
    for &d in &order {
        let det = &detections[d];
        let mut best: Option<(f64, usize)> = None;
        if let Some(candidates) = by_frame.get(&det.frame) {
            for &g in candidates {
                if gt_matched[g] {
                    continue;
                }
                let gt = &ground_truths[g];
                let iou = box_iou(det.center, det.side, gt.center, gt.side);
                if iou >= iou_threshold {
                    let better = match best {
                        None => true,
                        Some((best_iou, _)) => iou > best_iou,
                    };
                    if better {
                        best = Some((iou, g));
                    }
                }
            }
        }
        match best {
            Some((_, g)) => {
                gt_matched[g] = true;
                is_tp.push(true);
                matched_gt.push(Some(g));
            }
            None => {
                is_tp.push(false);
                matched_gt.push(None);
            }
        }
    }
    MatchResult { order, is_tp, matched_gt, gt_matched }
}

/// One point of the threshold sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
    pub tp: usize,
    pub fp: usize,
    pub missed: usize,
}

/// Precision-recall sweep over every distinct detection score, from high
/// threshold to low (recall non-decreasing).
#[derive(Debug, Clone, PartialEq)]
pub struct PRCurve {
    pub points: Vec<PrPoint>,
    pub n_ground_truth: usize,
}

fn curve_from_ranked(
    scores: &[f64],
    is_tp: &[bool],
    n_ground_truth: usize,
) -> PRCurve {
    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let n = scores.len();
    let mut i = 0;
    while i < n {
        let threshold = scores[i];
        while i < n && scores[i] == threshold {
            if is_tp[i] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold,
            recall: tp as f64 / n_ground_truth as f64,
            precision: tp as f64 / (tp + fp) as f64,
            tp,
            fp,
            missed: n_ground_truth - tp,
        });
    }
    PRCurve { points, n_ground_truth }
}

/// Builds the PR curve for a detection set. Errors on empty ground truth.
/// With no detections the curve is empty (precision is 1 by convention at
/// thresholds nothing passes, which contributes no area).
pub fn pr_curve(
    detections: &[Detection],
    ground_truths: &[GroundTruthBox],
    iou_threshold: f64,
) -> Result<PRCurve> {
    if ground_truths.is_empty() {
        return Err(Error::invalid("ground truth is empty"));
    }
    let m = match_detections(detections, ground_truths, iou_threshold);
    let scores: Vec<f64> = m.order.iter().map(|&d| detections[d].score).collect();
    Ok(curve_from_ranked(&scores, &m.is_tp, ground_truths.len()))
}

/// Step integral of precision over recall: sum of (r_k - r_{k-1}) * p_k with
/// r_0 = 0, precision taken at the higher-recall end of each step.
pub fn average_precision(curve: &PRCurve) -> f64 {
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for p in &curve.points {
        ap += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    ap
}

/// AveP for one ground-truth size bin.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeBinAp {
    /// Half-open side range [lo, hi) in pixels.
    pub lo: f64,
    pub hi: f64,
    pub avep: f64,
    pub n_ground_truth: usize,
}

/// Per-size-bin AveP. Ground truths are partitioned by side length; matched
/// detections follow their ground truth's bin, unmatched detections count as
/// false positives in every bin whose side range contains their own side.
/// Bins without ground truth are absent from the result.
pub fn avep_by_size(
    detections: &[Detection],
    ground_truths: &[GroundTruthBox],
    size_bin_edges: &[f64],
    iou_threshold: f64,
) -> Result<Vec<SizeBinAp>> {
    if size_bin_edges.len() < 2 {
        return Err(Error::invalid("need at least two bin edges"));
    }
    if size_bin_edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("bin edges must be strictly increasing"));
    }
    let m = match_detections(detections, ground_truths, iou_threshold);
    let mut out = Vec::new();
    for w in size_bin_edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let in_bin = |side: f64| side >= lo && side < hi;
        let n_gt = ground_truths.iter().filter(|g| in_bin(g.side)).count();
        if n_gt == 0 {
            continue;
        }
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for (rank, &d) in m.order.iter().enumerate() {
            let keep = match m.matched_gt[rank] {
                Some(g) => in_bin(ground_truths[g].side),
                None => in_bin(detections[d].side),
            };
            if keep {
                scores.push(detections[d].score);
                labels.push(m.is_tp[rank]);
            }
        }
        let curve = curve_from_ranked(&scores, &labels, n_gt);
        out.push(SizeBinAp { lo, hi, avep: average_precision(&curve), n_ground_truth: n_gt });
    }
    Ok(out)
}

/// Ground-truth CSV: `frame,center_x,center_y,side` with a header row.
/// center_x is the column coordinate, center_y the row.
pub fn write_ground_truth_csv(path: &Path, boxes: &[GroundTruthBox]) -> Result<()> {
    let mut s = String::from("frame,center_x,center_y,side\n");
    for b in boxes {
        writeln!(s, "{},{:.6},{:.6},{:.6}", b.frame, b.center.1, b.center.0, b.side)
            .expect("in-memory write cannot fail");
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_ground_truth_csv(path: &Path) -> Result<Vec<GroundTruthBox>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("frame")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::format(path, format!("line {}: expected 4 fields", lineno + 1)));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::format(path, format!("line {}: bad number '{}'", lineno + 1, s)))
        };
        let frame = fields[0].trim().parse::<usize>().map_err(|_| {
            Error::format(path, format!("line {}: bad frame index '{}'", lineno + 1, fields[0]))
        })?;
        let x = parse(fields[1])?;
        let y = parse(fields[2])?;
        let side = parse(fields[3])?;
        out.push(GroundTruthBox { frame, center: (y, x), side });
    }
    Ok(out)
}

/// PR CSV: `threshold,recall,precision` rows in sweep order.
pub fn write_pr_csv(path: &Path, curve: &PRCurve) -> Result<()> {
    let mut s = String::from("threshold,recall,precision\n");
    for p in &curve.points {
        writeln!(s, "{:.6},{:.6},{:.6}", p.threshold, p.recall, p.precision)
            .expect("in-memory write cannot fail");
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn det(frame: usize, row: f64, col: f64, side: f64, score: f64) -> Detection {
        Detection { frame, center: (row, col), side, score, scale: 1.0, motion: None }
    }

    fn gt(frame: usize, row: f64, col: f64, side: f64) -> GroundTruthBox {
        GroundTruthBox { frame, center: (row, col), side }
    }

    #[test]
    fn iou_basics() {
        assert!((box_iou((0.0, 0.0), 10.0, (0.0, 0.0), 10.0) - 1.0).abs() < 1e-12);
        assert_eq!(box_iou((0.0, 0.0), 10.0, (20.0, 20.0), 10.0), 0.0);
        // Half-overlapping squares: inter 50, union 150.
        let iou = box_iou((0.0, 0.0), 10.0, (0.0, 5.0), 10.0);
        assert!((iou - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn exact_detection_is_tp() {
        let dets = vec![det(0, 10.0, 10.0, 8.0, 0.9)];
        let gts = vec![gt(0, 10.0, 10.0, 8.0)];
        let m = match_detections(&dets, &gts, 0.5);
        assert_eq!(m.is_tp, vec![true]);
        assert_eq!(m.gt_matched, vec![true]);
    }

    #[test]
    fn single_match_rule() {
        let dets = vec![det(0, 10.0, 10.0, 8.0, 0.9), det(0, 10.5, 10.0, 8.0, 0.8)];
        let gts = vec![gt(0, 10.0, 10.0, 8.0)];
        let m = match_detections(&dets, &gts, 0.5);
        assert_eq!(m.is_tp, vec![true, false]);
    }

    #[test]
    fn matching_is_per_frame() {
        let dets = vec![det(1, 10.0, 10.0, 8.0, 0.9)];
        let gts = vec![gt(0, 10.0, 10.0, 8.0)];
        let m = match_detections(&dets, &gts, 0.5);
        assert_eq!(m.is_tp, vec![false]);
    }

    #[test]
    fn matching_equals_reference_greedy() {
        // Independent reference: same protocol, written as a direct
        // quadratic scan over score-sorted detections.
        let mut rng = Rng::new(99);
        for _ in 0..20 {
            let gts: Vec<GroundTruthBox> = (0..10)
                .map(|k| {
                    gt(
                        (k % 4) as usize,
                        rng.range_f64(10.0, 90.0),
                        rng.range_f64(10.0, 90.0),
                        rng.range_f64(6.0, 20.0),
                    )
                })
                .collect();
            let dets: Vec<Detection> = (0..20)
                .map(|k| {
                    det(
                        (k % 4) as usize,
                        rng.range_f64(10.0, 90.0),
                        rng.range_f64(10.0, 90.0),
                        rng.range_f64(6.0, 20.0),
                        rng.next_f64(),
                    )
                })
                .collect();
            let m = match_detections(&dets, &gts, 0.5);

            let order = rank_order(&dets);
            let mut taken = vec![false; gts.len()];
            let mut expect = Vec::new();
            for &d in &order {
                let mut best_iou = 0.0;
                let mut best_g = None;
                for (g, gtb) in gts.iter().enumerate() {
                    if taken[g] || gtb.frame != dets[d].frame {
                        continue;
                    }
                    let iou = box_iou(dets[d].center, dets[d].side, gtb.center, gtb.side);
                    if iou >= 0.5 && iou > best_iou {
                        best_iou = iou;
                        best_g = Some(g);
                    }
                }
                if let Some(g) = best_g {
                    taken[g] = true;
                    expect.push(true);
                } else {
                    expect.push(false);
                }
            }
            assert_eq!(m.is_tp, expect);
        }
    }

    #[test]
    fn perfect_single_detection_curve() {
        let dets = vec![det(0, 10.0, 10.0, 8.0, 0.9)];
        let gts = vec![gt(0, 10.0, 10.0, 8.0)];
        let curve = pr_curve(&dets, &gts, 0.5).unwrap();
        assert_eq!(curve.points.len(), 1);
        assert_eq!(curve.points[0].recall, 1.0);
        assert_eq!(curve.points[0].precision, 1.0);
        assert_eq!(average_precision(&curve), 1.0);
    }

    #[test]
    fn all_false_detections_zero_ap() {
        let dets = vec![det(0, 50.0, 50.0, 8.0, 0.9), det(0, 70.0, 70.0, 8.0, 0.7)];
        let gts = vec![gt(0, 10.0, 10.0, 8.0)];
        let curve = pr_curve(&dets, &gts, 0.5).unwrap();
        assert!(curve.points.iter().all(|p| p.precision == 0.0));
        assert_eq!(average_precision(&curve), 0.0);
    }

    #[test]
    fn empty_ground_truth_rejected() {
        assert!(pr_curve(&[], &[], 0.5).is_err());
    }

    #[test]
    fn hand_enumerated_six_detection_sweep() {
        let gts = vec![gt(0, 10.0, 10.0, 10.0), gt(1, 10.0, 10.0, 10.0), gt(2, 10.0, 10.0, 10.0)];
        let dets = vec![
            det(0, 10.0, 10.0, 10.0, 0.9), // TP
            det(0, 30.0, 30.0, 10.0, 0.8), // FP
            det(1, 10.0, 10.0, 10.0, 0.7), // TP
            det(5, 10.0, 10.0, 10.0, 0.6), // FP (no GT on frame 5)
            det(2, 10.0, 10.0, 10.0, 0.5), // TP
            det(2, 10.0, 10.0, 10.0, 0.4), // FP (GT already claimed)
        ];
        let curve = pr_curve(&dets, &gts, 0.5).unwrap();
        let expect = [
            (0.9, 1.0 / 3.0, 1.0),
            (0.8, 1.0 / 3.0, 0.5),
            (0.7, 2.0 / 3.0, 2.0 / 3.0),
            (0.6, 2.0 / 3.0, 0.5),
            (0.5, 1.0, 0.6),
            (0.4, 1.0, 0.5),
        ];
        assert_eq!(curve.points.len(), expect.len());
        for (p, (thr, r, prec)) in curve.points.iter().zip(expect.iter()) {
            assert!((p.threshold - thr).abs() < 1e-12);
            assert!((p.recall - r).abs() < 1e-12);
            assert!((p.precision - prec).abs() < 1e-12);
        }
        // AveP = 1/3*1 + 1/3*2/3 + 1/3*3/5 = 34/45.
        assert!((average_precision(&curve) - 34.0 / 45.0).abs() < 1e-12);
    }

    #[test]
    fn recall_non_decreasing() {
        let mut rng = Rng::new(4);
        let gts: Vec<GroundTruthBox> =
            (0..6).map(|k| gt(k, 20.0, 20.0, 10.0)).collect();
        let dets: Vec<Detection> = (0..30)
            .map(|k| {
                det(
                    (k % 8) as usize,
                    rng.range_f64(10.0, 40.0),
                    rng.range_f64(10.0, 40.0),
                    10.0,
                    rng.next_f64(),
                )
            })
            .collect();
        let curve = pr_curve(&dets, &gts, 0.5).unwrap();
        for w in curve.points.windows(2) {
            assert!(w[1].recall >= w[0].recall);
            assert!(w[1].threshold < w[0].threshold);
        }
    }

    #[test]
    fn ap_invariant_under_monotone_score_transform() {
        let mut rng = Rng::new(17);
        let gts: Vec<GroundTruthBox> = (0..5).map(|k| gt(k, 20.0, 20.0, 10.0)).collect();
        let dets: Vec<Detection> = (0..25)
            .map(|k| {
                det(
                    (k % 6) as usize,
                    rng.range_f64(12.0, 30.0),
                    rng.range_f64(12.0, 30.0),
                    10.0,
                    rng.next_f64(),
                )
            })
            .collect();
        let base = average_precision(&pr_curve(&dets, &gts, 0.5).unwrap());
        let transformed: Vec<Detection> = dets
            .iter()
            .map(|d| Detection { score: 0.1 + 0.8 * d.score * d.score, ..d.clone() })
            .collect();
        let mapped = average_precision(&pr_curve(&transformed, &gts, 0.5).unwrap());
        assert_eq!(base, mapped);
    }

    #[test]
    fn ap_is_one_iff_all_gt_above_all_fp() {
        let gts = vec![gt(0, 10.0, 10.0, 10.0), gt(1, 10.0, 10.0, 10.0)];
        let good = vec![
            det(0, 10.0, 10.0, 10.0, 0.9),
            det(1, 10.0, 10.0, 10.0, 0.8),
            det(0, 50.0, 50.0, 10.0, 0.3),
        ];
        let curve = pr_curve(&good, &gts, 0.5).unwrap();
        assert_eq!(average_precision(&curve), 1.0);
        // An FP ranked between the TPs drops it below 1.
        let worse = vec![
            det(0, 10.0, 10.0, 10.0, 0.9),
            det(0, 50.0, 50.0, 10.0, 0.85),
            det(1, 10.0, 10.0, 10.0, 0.8),
        ];
        let curve = pr_curve(&worse, &gts, 0.5).unwrap();
        assert!(average_precision(&curve) < 1.0);
    }

    #[test]
    fn by_size_single_bin_equals_global() {
        let gts = vec![gt(0, 10.0, 10.0, 12.0), gt(1, 10.0, 10.0, 14.0)];
        let dets = vec![
            det(0, 10.0, 10.0, 12.0, 0.9),
            det(1, 40.0, 40.0, 13.0, 0.7),
            det(1, 10.0, 10.0, 14.0, 0.6),
        ];
        let global = average_precision(&pr_curve(&dets, &gts, 0.5).unwrap());
        let bins = avep_by_size(&dets, &gts, &[10.0, 20.0], 0.5).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].avep, global);
        assert_eq!(bins[0].n_ground_truth, 2);
    }

    #[test]
    fn by_size_empty_bins_absent() {
        let gts = vec![gt(0, 10.0, 10.0, 12.0)];
        let dets = vec![det(0, 10.0, 10.0, 12.0, 0.9)];
        let bins = avep_by_size(&dets, &gts, &[0.0, 5.0, 20.0, 50.0], 0.5).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!((bins[0].lo, bins[0].hi), (5.0, 20.0));
    }

    #[test]
    fn by_size_matches_filter_then_evaluate_oracle() {
        let mut rng = Rng::new(31);
        let gts: Vec<GroundTruthBox> = (0..12)
            .map(|k| {
                gt(
                    (k % 5) as usize,
                    rng.range_f64(20.0, 80.0),
                    rng.range_f64(20.0, 80.0),
                    [15.0, 50.0, 90.0][(k % 3) as usize],
                )
            })
            .collect();
        let mut dets = Vec::new();
        for g in &gts {
            if rng.next_f64() < 0.8 {
                dets.push(det(
                    g.frame,
                    g.center.0 + rng.range_f64(-2.0, 2.0),
                    g.center.1 + rng.range_f64(-2.0, 2.0),
                    g.side * rng.range_f64(0.9, 1.1),
                    rng.next_f64(),
                ));
            }
        }
        for _ in 0..10 {
            dets.push(det(
                rng.below(5) as usize,
                rng.range_f64(20.0, 80.0),
                rng.range_f64(20.0, 80.0),
                rng.range_f64(10.0, 95.0),
                rng.next_f64(),
            ));
        }
        let edges = [10.0, 35.0, 75.0, 100.0];
        let bins = avep_by_size(&dets, &gts, &edges, 0.5).unwrap();

        // Oracle: use the global match labels, filter per bin, and integrate
        // the step function directly.
        let m = match_detections(&dets, &gts, 0.5);
        for bin in &bins {
            let n_gt = gts.iter().filter(|g| g.side >= bin.lo && g.side < bin.hi).count();
            let mut pairs: Vec<(f64, bool)> = Vec::new();
            for (rank, &d) in m.order.iter().enumerate() {
                let keep = match m.matched_gt[rank] {
                    Some(g) => gts[g].side >= bin.lo && gts[g].side < bin.hi,
                    None => dets[d].side >= bin.lo && dets[d].side < bin.hi,
                };
                if keep {
                    pairs.push((dets[d].score, m.is_tp[rank]));
                }
            }
            let mut ap = 0.0;
            let mut tp = 0;
            let mut fp = 0;
            let mut prev_r = 0.0;
            let mut i = 0;
            while i < pairs.len() {
                let thr = pairs[i].0;
                while i < pairs.len() && pairs[i].0 == thr {
                    if pairs[i].1 {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                    i += 1;
                }
                let r = tp as f64 / n_gt as f64;
                let p = tp as f64 / (tp + fp) as f64;
                ap += (r - prev_r) * p;
                prev_r = r;
            }
            assert!((bin.avep - ap).abs() < 1e-12);
        }
    }

    #[test]
    fn gt_csv_round_trip() {
        let dir = std::env::temp_dir().join("skywatch_evalkit_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("gt.csv");
        let boxes = vec![gt(0, 10.5, 20.25, 14.0), gt(3, 77.0, 1.0, 40.0)];
        write_ground_truth_csv(&path, &boxes).unwrap();
        let back = read_ground_truth_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].frame, 0);
        assert!((back[0].center.0 - 10.5).abs() < 1e-6);
        assert!((back[0].center.1 - 20.25).abs() < 1e-6);
        assert!((back[1].side - 40.0).abs() < 1e-6);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
