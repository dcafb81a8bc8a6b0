//! Detection metrics: IoU, confidence-ordered matching at an IoU gate,
//! precision-recall curves, average precision and mAP50.
//!
//! Matching works in normalized box coordinates (clamped to the unit
//! square). Scaling x by the slice width and y by the slice height scales
//! every rectangle area by the same factor, so the IoU there equals the
//! pixel-space IoU for any slice size.

use crate::annotation::{AbsRect, Annotation, DefectClass, Prediction};
use crate::error::{Error, Result};

/// Intersection over union of two rectangles, in exact f64 arithmetic.
pub fn iou(a: &AbsRect, b: &AbsRect) -> Result<f64> {
    if a.x0 >= a.x1 || a.y0 >= a.y1 || b.x0 >= b.x1 || b.y0 >= b.y1 {
        return Err(Error::DegenerateBox);
    }
    let ix = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let iy = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = ix * iy;
    if inter == 0.0 {
        return Ok(0.0);
    }
    Ok(inter / (a.area() + b.area() - inter))
}

/// One prediction's outcome after matching: a true positive carries the
/// index of the ground-truth box it consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub prediction: Prediction,
    pub matched_gt: Option<usize>,
}

impl Verdict {
    pub fn is_tp(&self) -> bool {
        self.matched_gt.is_some()
    }
}

/// Outcome of matching one prediction set against one ground-truth set.
/// Verdicts are stored in canonical order: descending confidence, ties by
/// ascending input index.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub verdicts: Vec<Verdict>,
    pub unmatched_gt: usize,
    pub iou_threshold: f64,
    pub strict: bool,
}

impl MatchResult {
    pub fn tp_count(&self) -> usize {
        self.verdicts.iter().filter(|v| v.is_tp()).count()
    }

    pub fn fp_count(&self) -> usize {
        self.verdicts.len() - self.tp_count()
    }

    pub fn fn_count(&self) -> usize {
        self.unmatched_gt
    }
}

fn unit_rect(b: &crate::annotation::BoundingBox) -> AbsRect {
    b.to_absolute(1, 1)
        .expect("validated boxes are never degenerate on the unit square")
}

/// Greedy matching: walk predictions from highest confidence down; each
/// takes the unmatched ground-truth box (same class, same slice) of
/// highest IoU, provided the IoU passes the gate. The gate is `>= threshold`.
pub fn match_detections(
    preds: &[Prediction],
    gts: &[Annotation],
    iou_threshold: f64,
) -> MatchResult {
    match_detections_with(preds, gts, iou_threshold, false)
}

/// [`match_detections`] with a choice of gate: `strict` uses `> threshold`.
pub fn match_detections_with(
    preds: &[Prediction],
    gts: &[Annotation],
    iou_threshold: f64,
    strict: bool,
) -> MatchResult {
    let pred_rects: Vec<AbsRect> = preds.iter().map(|p| unit_rect(&p.bbox)).collect();
    let gt_rects: Vec<AbsRect> = gts.iter().map(|g| unit_rect(&g.bbox)).collect();

    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .total_cmp(&preds[a].confidence)
            .then(a.cmp(&b))
    });

    let mut taken = vec![false; gts.len()];
    let mut verdicts = Vec::with_capacity(preds.len());
    for &i in &order {
        let p = &preds[i];
        let mut best: Option<(f64, usize)> = None;
        for (j, g) in gts.iter().enumerate() {
            if taken[j] || g.class != p.class || g.slice_index != p.slice_index {
                continue;
            }
            let v = iou(&pred_rects[i], &gt_rects[j]).expect("rects are non-degenerate");
            // Strict inequality keeps the lowest ground-truth index on ties.
            if best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, j));
            }
        }
        let matched_gt = best.and_then(|(v, j)| {
            let pass = if strict { v > iou_threshold } else { v >= iou_threshold };
            pass.then_some(j)
        });
        if let Some(j) = matched_gt {
            taken[j] = true;
        }
        verdicts.push(Verdict {
            prediction: *p,
            matched_gt,
        });
    }

    let tp = verdicts.iter().filter(|v| v.is_tp()).count();
    MatchResult {
        verdicts,
        unmatched_gt: gts.len() - tp,
        iou_threshold,
        strict,
    }
}

/// Precision-recall points from a confidence-descending sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct PRCurve {
    /// (recall, precision) after each prediction, in sweep order.
    pub points: Vec<(f64, f64)>,
    pub gt_count: usize,
}

/// Build the PR curve from verdicts already in canonical (confidence
/// descending) order. With no ground truth the curve is empty.
pub fn pr_curve(verdicts: &[Verdict], gt_count: usize) -> PRCurve {
    let mut points = Vec::new();
    if gt_count > 0 {
        let mut tp = 0usize;
        for (k, v) in verdicts.iter().enumerate() {
            if v.is_tp() {
                tp += 1;
            }
            points.push((tp as f64 / gt_count as f64, tp as f64 / (k + 1) as f64));
        }
    }
    PRCurve { points, gt_count }
}

/// All-points average precision: area under the running-maximum precision
/// envelope, summed over distinct recall breakpoints.
pub fn average_precision(curve: &PRCurve) -> f64 {
    let n = curve.points.len();
    if n == 0 {
        return 0.0;
    }
    // Suffix maximum turns precision into the non-increasing envelope.
    let mut envelope: Vec<f64> = curve.points.iter().map(|&(_, p)| p).collect();
    for i in (0..n - 1).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(r, _)) in curve.points.iter().enumerate() {
        if r > prev_recall {
            ap += (r - prev_recall) * envelope[i];
            prev_recall = r;
        }
    }
    ap
}

/// 11-point interpolated average precision: mean of the precision envelope
/// sampled at recalls 0.0, 0.1, ..., 1.0.
pub fn average_precision_11point(curve: &PRCurve) -> f64 {
    if curve.points.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for step in 0..=10 {
        let r = step as f64 / 10.0;
        let best = curve
            .points
            .iter()
            .filter(|&&(rec, _)| rec >= r)
            .map(|&(_, p)| p)
            .fold(0.0f64, f64::max);
        total += best;
    }
    total / 11.0
}

/// Per-class AP; `ap` is `None` exactly when the class has no ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassAP {
    pub class: DefectClass,
    pub ap: Option<f64>,
}

/// Mean AP over the classes present in the ground truth.
pub fn map50(per_class: &[ClassAP]) -> Result<f64> {
    let present: Vec<f64> = per_class.iter().filter_map(|c| c.ap).collect();
    if present.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}
