//! Ground-truth matching and metric computation.

use std::collections::BTreeMap;

use crate::imaging::BoundingBox;

/// Intersection-over-union of two boxes; 0 when disjoint.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let x0 = a.x.max(b.x);
    let y0 = a.y.max(b.y);
    let x1 = a.right().min(b.right());
    let y1 = a.bottom().min(b.bottom());
    if x1 <= x0 || y1 <= y0 {
        return 0.0;
    }
    let inter = (x1 - x0) as f64 * (y1 - y0) as f64;
    let union = (a.w as f64 * a.h as f64) + (b.w as f64 * b.h as f64) - inter;
    inter / union
}

/// Per-frame ground-truth boxes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub per_frame: BTreeMap<usize, Vec<BoundingBox>>,
}

impl GroundTruth {
    pub fn total_boxes(&self) -> usize {
        self.per_frame.values().map(Vec::len).sum()
    }
}

/// A scored detection candidate for matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub frame_index: usize,
    pub bbox: BoundingBox,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub counts: MatchCounts,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    /// (false positives per frame, recall) per score threshold, threshold
    /// descending.
    pub roc: Vec<RocPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fppf: f64,
    pub recall: f64,
}

/// Greedy one-to-one matching per frame: detections in descending score
/// order, each matched to the unmatched GT box of highest IoU at or above
/// the threshold.
pub fn match_detections(dets: &[ScoredBox], gt: &GroundTruth, iou_thresh: f64) -> MatchCounts {
    let mut per_frame: BTreeMap<usize, Vec<&ScoredBox>> = BTreeMap::new();
    for d in dets {
        per_frame.entry(d.frame_index).or_default().push(d);
    }
    let mut counts = MatchCounts::default();
    let mut frames: std::collections::BTreeSet<usize> = gt.per_frame.keys().copied().collect();
    frames.extend(per_frame.keys().copied());
    for frame in frames {
        let empty = Vec::new();
        let gt_boxes = gt.per_frame.get(&frame).unwrap_or(&empty);
        let mut dets = per_frame.remove(&frame).unwrap_or_default();
        dets.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then(a.bbox.x.cmp(&b.bbox.x))
                .then(a.bbox.y.cmp(&b.bbox.y))
        });
        let mut taken = vec![false; gt_boxes.len()];
        for d in dets {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt_box) in gt_boxes.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let overlap = iou(&d.bbox, gt_box);
                if overlap >= iou_thresh && best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((g, overlap));
                }
            }
            match best {
                Some((g, _)) => {
                    taken[g] = true;
                    counts.tp += 1;
                }
                None => counts.fp += 1,
            }
        }
        counts.fn_ += taken.iter().filter(|&&t| !t).count();
    }
    counts
}

/// Precision, recall and F-measure with the 0/0 -> 0 convention.
pub fn prf(counts: MatchCounts) -> (f64, f64, f64) {
    let precision = if counts.tp + counts.fp == 0 {
        0.0
    } else {
        counts.tp as f64 / (counts.tp + counts.fp) as f64
    };
    let recall = if counts.tp + counts.fn_ == 0 {
        0.0
    } else {
        counts.tp as f64 / (counts.tp + counts.fn_) as f64
    };
    let f_measure = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f_measure)
}

/// Sweep the score threshold over all distinct response scores; per
/// threshold report (FP per frame, recall). `n_frames` is the evaluated
/// frame count for the FP normalization.
pub fn roc_curve(
    responses: &[ScoredBox],
    gt: &GroundTruth,
    iou_thresh: f64,
    n_frames: usize,
) -> Vec<RocPoint> {
    let mut thresholds: Vec<f64> = responses.iter().map(|r| r.score).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let total_gt = gt.total_boxes();
    let frames = n_frames.max(1);
    thresholds
        .into_iter()
        .map(|threshold| {
            let accepted: Vec<ScoredBox> = responses
                .iter()
                .filter(|r| r.score >= threshold)
                .copied()
                .collect();
            let counts = match_detections(&accepted, gt, iou_thresh);
            RocPoint {
                threshold,
                fppf: counts.fp as f64 / frames as f64,
                recall: if total_gt == 0 {
                    0.0
                } else {
                    counts.tp as f64 / total_gt as f64
                },
            }
        })
        .collect()
}

/// Full metric bundle for a detection run.
pub fn compute_metrics(
    dets: &[ScoredBox],
    responses: &[ScoredBox],
    gt: &GroundTruth,
    iou_thresh: f64,
    n_frames: usize,
) -> Metrics {
    let counts = match_detections(dets, gt, iou_thresh);
    let (precision, recall, f_measure) = prf(counts);
    Metrics {
        counts,
        precision,
        recall,
        f_measure,
        roc: roc_curve(responses, gt, iou_thresh, n_frames),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x: i32, y: i32, w: u32, h: u32) -> BoundingBox {
        BoundingBox::new(x, y, w, h)
    }

    #[test]
    fn iou_identical() {
        assert_eq!(iou(&bb(2, 3, 10, 10), &bb(2, 3, 10, 10)), 1.0);
    }

    #[test]
    fn iou_disjoint() {
        assert_eq!(iou(&bb(0, 0, 5, 5), &bb(10, 10, 5, 5)), 0.0);
    }

    #[test]
    fn iou_half_overlap() {
        let v = iou(&bb(0, 0, 10, 10), &bb(5, 0, 10, 10));
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }

    fn gt_one_frame(boxes: &[BoundingBox]) -> GroundTruth {
        let mut gt = GroundTruth::default();
        gt.per_frame.insert(0, boxes.to_vec());
        gt
    }

    #[test]
    fn exact_detections_all_tp() {
        let boxes = [bb(0, 0, 10, 10), bb(50, 50, 10, 10)];
        let gt = gt_one_frame(&boxes);
        let dets: Vec<ScoredBox> = boxes
            .iter()
            .map(|&bbox| ScoredBox {
                frame_index: 0,
                bbox,
                score: 1.0,
            })
            .collect();
        let counts = match_detections(&dets, &gt, 0.5);
        assert_eq!(counts, MatchCounts { tp: 2, fp: 0, fn_: 0 });
    }

    #[test]
    fn empty_detections_all_fn() {
        let gt = gt_one_frame(&[bb(0, 0, 10, 10), bb(40, 0, 10, 10)]);
        let counts = match_detections(&[], &gt, 0.5);
        assert_eq!(counts, MatchCounts { tp: 0, fp: 0, fn_: 2 });
    }

    #[test]
    fn duplicate_detection_is_fp() {
        let gt = gt_one_frame(&[bb(0, 0, 10, 10)]);
        let dets = [
            ScoredBox { frame_index: 0, bbox: bb(0, 0, 10, 10), score: 0.9 },
            ScoredBox { frame_index: 0, bbox: bb(1, 0, 10, 10), score: 0.8 },
        ];
        let counts = match_detections(&dets, &gt, 0.5);
        assert_eq!(counts, MatchCounts { tp: 1, fp: 1, fn_: 0 });
    }

    #[test]
    fn counts_partition_totals() {
        let gt = gt_one_frame(&[bb(0, 0, 10, 10), bb(30, 30, 10, 10)]);
        let dets = [
            ScoredBox { frame_index: 0, bbox: bb(0, 0, 10, 10), score: 0.9 },
            ScoredBox { frame_index: 0, bbox: bb(70, 70, 10, 10), score: 0.7 },
        ];
        let counts = match_detections(&dets, &gt, 0.5);
        assert_eq!(counts.tp + counts.fn_, gt.total_boxes());
        assert_eq!(counts.tp + counts.fp, dets.len());
    }

    #[test]
    fn prf_perfect() {
        let (_, _, f) = prf(MatchCounts { tp: 5, fp: 0, fn_: 0 });
        assert_eq!(f, 1.0);
    }

    #[test]
    fn prf_no_tp() {
        let (p, r, f) = prf(MatchCounts { tp: 0, fp: 3, fn_: 4 });
        assert_eq!((p, r, f), (0.0, 0.0, 0.0));
    }

    #[test]
    fn prf_harmonic_mean() {
        // P = 0.8, R = 0.9 -> F = 1.44 / 1.7.
        let (p, r, f) = prf(MatchCounts { tp: 72, fp: 18, fn_: 8 });
        assert!((p - 0.8).abs() < 1e-12);
        assert!((r - 0.9).abs() < 1e-12);
        assert!((f - 1.44 / 1.7).abs() < 1e-12);
    }

    #[test]
    fn prf_symmetric_in_p_and_r() {
        let a = prf(MatchCounts { tp: 72, fp: 18, fn_: 8 });
        let b = prf(MatchCounts { tp: 72, fp: 8, fn_: 18 });
        assert!((a.2 - b.2).abs() < 1e-12);
    }

    #[test]
    fn roc_endpoints_and_monotonicity() {
        let gt = gt_one_frame(&[bb(0, 0, 10, 10)]);
        let responses = [
            ScoredBox { frame_index: 0, bbox: bb(0, 0, 10, 10), score: 0.9 },
            ScoredBox { frame_index: 0, bbox: bb(50, 50, 10, 10), score: 0.4 },
            ScoredBox { frame_index: 0, bbox: bb(70, 10, 10, 10), score: 0.2 },
        ];
        let roc = roc_curve(&responses, &gt, 0.5, 1);
        assert_eq!(roc.len(), 3);
        // Highest threshold keeps only the true detection.
        assert_eq!(roc[0].recall, 1.0);
        assert_eq!(roc[0].fppf, 0.0);
        // Lowest threshold accepts everything.
        assert_eq!(roc.last().unwrap().fppf, 2.0);
        for pair in roc.windows(2) {
            assert!(pair[1].recall >= pair[0].recall);
        }
    }
}
