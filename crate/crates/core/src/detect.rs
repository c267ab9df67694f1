//! Multi-scale sliding-window detection and non-maximum suppression.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::ops::ControlFlow;

use crate::error::{Error, Result};
use crate::eval::iou;
use crate::fern::OsfClassifier;
use crate::gdm::{partition_response, DualBoundary, GdmModel, Region};
use crate::hog::compute_hog;
use crate::imaging::{extract_patch, round_u8, BoundingBox, Frame, FERN_PATCH_SIDE, HOG_PATCH_SIDE};
use crate::num::Real;

/// Minimum window side; smaller scale-ladder entries are dropped.
pub const MIN_WINDOW_SIDE: u32 = 8;

/// Window sizes of the detection ladder, smallest first, constant aspect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleSet {
    pub sizes: Vec<(u32, u32)>,
    /// Ladder entries dropped for falling below the minimum side.
    pub dropped: usize,
}

/// Geometric scale ladder centered on the seed box size:
/// `seed * ratio^k` for `k` in `[-(n-1)/2, +(n-1)/2]`, rounded to pixels.
pub fn build_scale_set(seed_box: &BoundingBox, n_scales: usize, ratio: f64) -> Result<ScaleSet> {
    assert!(n_scales >= 1);
    assert!(ratio > 1.0);
    let half = (n_scales as i64 - 1) / 2;
    let mut sizes = Vec::with_capacity(n_scales);
    let mut dropped = 0;
    for i in 0..n_scales as i64 {
        let factor = ratio.powi((i - half) as i32);
        let w = (seed_box.w as f64 * factor).round() as u32;
        let h = (seed_box.h as f64 * factor).round() as u32;
        if w < MIN_WINDOW_SIDE || h < MIN_WINDOW_SIDE {
            dropped += 1;
            continue;
        }
        if sizes.last() != Some(&(w, h)) {
            sizes.push((w, h));
        }
    }
    if sizes.is_empty() {
        return Err(Error::AllScalesDropped);
    }
    Ok(ScaleSet { sizes, dropped })
}

/// Stride in pixels for one window dimension.
#[inline]
fn stride_px(extent: u32, stride_frac: f64) -> u32 {
    ((extent as f64 * stride_frac).round() as u32).max(1)
}

/// Closed-form count of scanned window positions over all scales.
pub fn window_count(frame_w: u32, frame_h: u32, scales: &ScaleSet, stride_frac: f64) -> usize {
    scales
        .sizes
        .iter()
        .filter(|&&(w, h)| w <= frame_w && h <= frame_h)
        .map(|&(w, h)| {
            let nx = (frame_w - w) / stride_px(w, stride_frac) + 1;
            let ny = (frame_h - h) / stride_px(h, stride_frac) + 1;
            (nx * ny) as usize
        })
        .sum()
}

/// One bilinear tap of a fern coordinate mapped into frame space for a fixed
/// window size. Window origins are integer, so the fractional interpolation
/// weights are constant per scale; only border windows fall back to the
/// generic clamped sampler.
#[derive(Debug, Clone, Copy)]
struct Tap {
    dx: f64,
    dy: f64,
    ix: i64,
    iy: i64,
    /// `iy * frame_width + ix`, the tap's pixel offset from the window
    /// origin in the flattened frame.
    flat: i64,
    w00: f64,
    w10: f64,
    w01: f64,
    w11: f64,
}

impl Tap {
    fn new(coord: (u32, u32), win_w: u32, win_h: u32, frame_width: u32) -> Tap {
        let dx = (coord.0 as f64 + 0.5) * win_w as f64 / FERN_PATCH_SIDE as f64 - 0.5;
        let dy = (coord.1 as f64 + 0.5) * win_h as f64 / FERN_PATCH_SIDE as f64 - 0.5;
        let ix = dx.floor() as i64;
        let iy = dy.floor() as i64;
        let fx = dx - ix as f64;
        let fy = dy - iy as f64;
        Tap {
            dx,
            dy,
            ix,
            iy,
            flat: iy * frame_width as i64 + ix,
            w00: (1.0 - fx) * (1.0 - fy),
            w10: fx * (1.0 - fy),
            w01: (1.0 - fx) * fy,
            w11: fx * fy,
        }
    }

    #[inline]
    fn sample(&self, frame: &Frame, x0: u32, y0: u32) -> u8 {
        let x = x0 as i64 + self.ix;
        let y = y0 as i64 + self.iy;
        if x >= 0 && y >= 0 && x + 1 < frame.width as i64 && y + 1 < frame.height as i64 {
            let base = (y as usize) * frame.width as usize + x as usize;
            let p = &frame.pixels;
            let v = self.w00 * p[base] as f64
                + self.w10 * p[base + 1] as f64
                + self.w01 * p[base + frame.width as usize] as f64
                + self.w11 * p[base + frame.width as usize + 1] as f64;
            round_u8(v)
        } else {
            frame.sample_bilinear(x0 as f64 + self.dx, y0 as f64 + self.dy)
        }
    }

    /// Same value as [`Tap::sample`] for windows whose every tap is interior;
    /// the caller has proven the four reads in bounds for the whole window.
    #[inline(always)]
    unsafe fn sample_unchecked(&self, p: &[u8], width: usize, base: i64) -> u8 {
        let idx = (base + self.flat) as usize;
        let v = self.w00 * f64::from(*p.get_unchecked(idx))
            + self.w10 * f64::from(*p.get_unchecked(idx + 1))
            + self.w01 * f64::from(*p.get_unchecked(idx + width))
            + self.w11 * f64::from(*p.get_unchecked(idx + width + 1));
        round_u8(v)
    }
}

/// Active fern of one selector compiled for a fixed window size.
struct CompiledSelector {
    taps: Vec<(Tap, Tap)>,
}

struct CompiledScale<R: Real> {
    size: (u32, u32),
    selectors: Vec<CompiledSelector>,
    /// Weak confidence per code, per selector.
    tables: Vec<Vec<R>>,
    /// Tap-offset envelope over all selectors; a window whose envelope is
    /// interior can take the unchecked sampling path.
    min_ix: i64,
    max_ix: i64,
    min_iy: i64,
    max_iy: i64,
}

fn compile_scale<R: Real>(
    osf: &OsfClassifier<R>,
    size: (u32, u32),
    frame_width: u32,
) -> CompiledScale<R> {
    let selectors: Vec<CompiledSelector> = osf
        .selectors
        .iter()
        .map(|sel| CompiledSelector {
            taps: sel
                .active()
                .fern
                .pairs
                .iter()
                .map(|p| {
                    (
                        Tap::new(p.a, size.0, size.1, frame_width),
                        Tap::new(p.b, size.0, size.1, frame_width),
                    )
                })
                .collect(),
        })
        .collect();
    let tables = osf
        .selectors
        .iter()
        .map(|sel| {
            let post = &sel.active().posterior;
            (0..post.bins()).map(|k| post.weak_confidence(k)).collect()
        })
        .collect();
    let taps = selectors
        .iter()
        .flat_map(|s| s.taps.iter())
        .flat_map(|(a, b)| [a, b]);
    let (mut min_ix, mut max_ix, mut min_iy, mut max_iy) = (i64::MAX, i64::MIN, i64::MAX, i64::MIN);
    for t in taps {
        min_ix = min_ix.min(t.ix);
        max_ix = max_ix.max(t.ix);
        min_iy = min_iy.min(t.iy);
        max_iy = max_iy.max(t.iy);
    }
    CompiledScale {
        size,
        selectors,
        tables,
        min_ix,
        max_ix,
        min_iy,
        max_iy,
    }
}

#[inline]
fn score_window<R: Real>(scale: &CompiledScale<R>, frame: &Frame, x0: u32, y0: u32) -> R {
    let width = frame.width as i64;
    let interior = x0 as i64 + scale.min_ix >= 0
        && x0 as i64 + scale.max_ix + 1 < width
        && y0 as i64 + scale.min_iy >= 0
        && y0 as i64 + scale.max_iy + 1 < frame.height as i64;
    let mut sum = R::zero();
    if interior {
        let base = y0 as i64 * width + x0 as i64;
        let p = frame.pixels.as_slice();
        let w = frame.width as usize;
        for (sel, table) in scale.selectors.iter().zip(&scale.tables) {
            let mut code = 0usize;
            for (j, (a, b)) in sel.taps.iter().enumerate() {
                // In-bounds for every tap by the envelope check above.
                let (va, vb) = unsafe { (a.sample_unchecked(p, w, base), b.sample_unchecked(p, w, base)) };
                if va > vb {
                    code |= 1 << j;
                }
            }
            sum = sum + table[code];
        }
    } else {
        for (sel, table) in scale.selectors.iter().zip(&scale.tables) {
            let mut code = 0usize;
            for (j, (a, b)) in sel.taps.iter().enumerate() {
                if a.sample(frame, x0, y0) > b.sample(frame, x0, y0) {
                    code |= 1 << j;
                }
            }
            sum = sum + table[code];
        }
    }
    sum / R::of_usize(scale.selectors.len())
}

/// Sequentially visit every window with its OSF score. Used by the learner;
/// the visitor can stop the scan early.
pub fn scan_fern_scores<R: Real>(
    osf: &OsfClassifier<R>,
    frame: &Frame,
    scales: &ScaleSet,
    stride_frac: f64,
    mut visit: impl FnMut(BoundingBox, R) -> ControlFlow<()>,
) {
    for &size in &scales.sizes {
        let (w, h) = size;
        if w > frame.width || h > frame.height {
            continue;
        }
        let compiled = compile_scale(osf, size, frame.width);
        let sx = stride_px(w, stride_frac);
        let sy = stride_px(h, stride_frac);
        let mut y0 = 0;
        while y0 + h <= frame.height {
            let mut x0 = 0;
            while x0 + w <= frame.width {
                let score = score_window(&compiled, frame, x0, y0);
                let bbox = BoundingBox::new(x0 as i32, y0 as i32, w, h);
                if visit(bbox, score).is_break() {
                    return;
                }
                x0 += sx;
            }
            y0 += sy;
        }
    }
}

/// Score every window and keep those passing `keep`, fanning out over the
/// ambient rayon pool. Output order matches the sequential scan.
pub fn par_scan_filtered<R: Real>(
    osf: &OsfClassifier<R>,
    frame: &Frame,
    scales: &ScaleSet,
    stride_frac: f64,
    keep: impl Fn(R) -> bool + Sync,
) -> Vec<(BoundingBox, R)> {
    let compiled: Vec<CompiledScale<R>> = scales
        .sizes
        .iter()
        .filter(|&&(w, h)| w <= frame.width && h <= frame.height)
        .map(|&size| compile_scale(osf, size, frame.width))
        .collect();
    let mut positions: Vec<(usize, u32, u32)> = Vec::new();
    for (si, scale) in compiled.iter().enumerate() {
        let (w, h) = scale.size;
        let sx = stride_px(w, stride_frac);
        let sy = stride_px(h, stride_frac);
        let mut y0 = 0;
        while y0 + h <= frame.height {
            let mut x0 = 0;
            while x0 + w <= frame.width {
                positions.push((si, x0, y0));
                x0 += sx;
            }
            y0 += sy;
        }
    }
    positions
        .par_iter()
        .filter_map(|&(si, x0, y0)| {
            let scale = &compiled[si];
            let score = score_window(scale, frame, x0, y0);
            if keep(score) {
                let (w, h) = scale.size;
                Some((BoundingBox::new(x0 as i32, y0 as i32, w, h), score))
            } else {
                None
            }
        })
        .collect()
}

/// A scored window with its partition, plus the calibrated ordering score
/// used for NMS and ROC sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResponse<R: Real> {
    pub bbox: BoundingBox,
    pub fern_score: R,
    pub region: Region,
    /// Present iff the window fell in the Hard band.
    pub svm_margin: Option<R>,
    pub frame_index: usize,
    /// fern_score outside the band; inside it, the SVM margin squashed into
    /// the band through a logistic.
    pub score: R,
}

impl<R: Real> DetectionResponse<R> {
    /// Detection rule: Positive region, or Hard with a positive SVM margin.
    pub fn is_detection(&self) -> bool {
        match self.region {
            Region::Positive => true,
            Region::Hard => self.svm_margin.is_some_and(|m| m > R::zero()),
            Region::Negative => false,
        }
    }
}

fn calibrated_score<R: Real>(
    fern_score: R,
    region: Region,
    svm_margin: Option<R>,
    boundary: &DualBoundary<R>,
) -> R {
    match (region, svm_margin) {
        (Region::Hard, Some(m)) => {
            let sigmoid = R::one() / (R::one() + (-m).exp());
            boundary.beta + boundary.theta * (sigmoid - R::of(0.5))
        }
        _ => fern_score,
    }
}

/// Score every window position at every scale with the hybrid classifier.
/// Returns all responses; detections are the subset passing
/// [`DetectionResponse::is_detection`]. Parallel over windows within the
/// ambient rayon pool, output order deterministic.
pub fn sliding_window_detect<R: Real>(
    model: &GdmModel<R>,
    frame: &Frame,
    scales: &ScaleSet,
    stride_frac: f64,
) -> Result<Vec<DetectionResponse<R>>> {
    let compiled: Vec<CompiledScale<R>> = scales
        .sizes
        .iter()
        .filter(|&&(w, h)| w <= frame.width && h <= frame.height)
        .map(|&size| compile_scale(&model.osf, size, frame.width))
        .collect();

    let mut positions: Vec<(usize, u32, u32)> = Vec::new();
    for (si, scale) in compiled.iter().enumerate() {
        let (w, h) = scale.size;
        let sx = stride_px(w, stride_frac);
        let sy = stride_px(h, stride_frac);
        let mut y0 = 0;
        while y0 + h <= frame.height {
            let mut x0 = 0;
            while x0 + w <= frame.width {
                positions.push((si, x0, y0));
                x0 += sx;
            }
            y0 += sy;
        }
    }

    positions
        .par_iter()
        .map(|&(si, x0, y0)| {
            let scale = &compiled[si];
            let (w, h) = scale.size;
            let bbox = BoundingBox::new(x0 as i32, y0 as i32, w, h);
            let fern_score = score_window(scale, frame, x0, y0);
            let region = partition_response(fern_score, &model.boundary);
            let svm_margin = if region == Region::Hard {
                let patch = extract_patch(frame, &bbox, HOG_PATCH_SIDE)?;
                let desc = compute_hog(&patch, &model.hog_params)?;
                Some(model.svm.margin(&desc)?)
            } else {
                None
            };
            Ok(DetectionResponse {
                bbox,
                fern_score,
                region,
                svm_margin,
                frame_index: frame.index,
                score: calibrated_score(fern_score, region, svm_margin, &model.boundary),
            })
        })
        .collect()
}

/// Greedy non-maximum suppression by descending calibrated score; ties are
/// broken by box position for determinism.
pub fn nms<R: Real>(responses: &[DetectionResponse<R>], iou_thresh: f64) -> Vec<DetectionResponse<R>> {
    let mut sorted: Vec<&DetectionResponse<R>> = responses.iter().collect();
    sorted.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.bbox.x.cmp(&b.bbox.x))
            .then(a.bbox.y.cmp(&b.bbox.y))
    });
    let mut kept: Vec<DetectionResponse<R>> = Vec::new();
    for resp in sorted {
        if kept.iter().all(|k| iou(&k.bbox, &resp.bbox) < iou_thresh) {
            kept.push(*resp);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fern::fern_code;

    fn seed() -> BoundingBox {
        BoundingBox::new(0, 0, 20, 20)
    }

    #[test]
    fn single_scale_is_seed_size() {
        let s = build_scale_set(&seed(), 1, 1.15).unwrap();
        assert_eq!(s.sizes, vec![(20, 20)]);
    }

    #[test]
    fn eleven_scales_middle_is_seed() {
        let s = build_scale_set(&seed(), 11, 1.15).unwrap();
        assert_eq!(s.sizes.len(), 11);
        assert_eq!(s.sizes[5], (20, 20));
        for pair in s.sizes.windows(2) {
            assert!(pair[1].0 > pair[0].0 && pair[1].1 > pair[0].1);
        }
    }

    #[test]
    fn geometric_ladder_ratio_two() {
        let s = build_scale_set(&seed(), 3, 2.0).unwrap();
        assert_eq!(s.sizes, vec![(10, 10), (20, 20), (40, 40)]);
    }

    #[test]
    fn tiny_scales_dropped() {
        let b = BoundingBox::new(0, 0, 10, 10);
        let s = build_scale_set(&b, 11, 1.5).unwrap();
        assert!(s.dropped > 0);
        assert!(s.sizes.iter().all(|&(w, h)| w >= 8 && h >= 8));
    }

    #[test]
    fn all_scales_dropped_errors() {
        let b = BoundingBox::new(0, 0, 2, 2);
        assert!(matches!(
            build_scale_set(&b, 1, 1.15),
            Err(Error::AllScalesDropped)
        ));
    }

    #[test]
    fn window_position_count() {
        // 100x100 frame, 20x20 window, stride 10 px -> 81 positions.
        let scales = ScaleSet {
            sizes: vec![(20, 20)],
            dropped: 0,
        };
        assert_eq!(window_count(100, 100, &scales, 0.5), 81);
    }

    #[test]
    fn scan_visits_closed_form_count() {
        let osf: OsfClassifier<f64> = OsfClassifier::new(2, 2, 4, 0.01, 0.5, 1).unwrap();
        let frame = Frame::new(100, 100, vec![50; 10000], 0);
        let scales = build_scale_set(&BoundingBox::new(0, 0, 20, 20), 3, 1.3).unwrap();
        let mut n = 0;
        scan_fern_scores(&osf, &frame, &scales, 0.125, |_, _| {
            n += 1;
            ControlFlow::Continue(())
        });
        assert_eq!(n, window_count(100, 100, &scales, 0.125));
    }

    #[test]
    fn fast_path_matches_patch_extraction() {
        // The compiled tap sampler must reproduce extract_patch + fern_code.
        let pixels: Vec<u8> = (0..120 * 90).map(|i| (i * 31 % 256) as u8).collect();
        let frame = Frame::new(120, 90, pixels, 0);
        let osf: OsfClassifier<f64> = OsfClassifier::new(4, 3, 6, 0.01, 0.5, 5).unwrap();
        for &size in &[(24u32, 18u32), (33, 47)] {
            let compiled = compile_scale(&osf, size, frame.width);
            for &(x0, y0) in &[(0u32, 0u32), (1, 2), (120 - size.0, 90 - size.1), (50, 33)] {
                let bbox = BoundingBox::new(x0 as i32, y0 as i32, size.0, size.1);
                let patch = extract_patch(&frame, &bbox, FERN_PATCH_SIDE).unwrap();
                let interior = x0 as i64 + compiled.min_ix >= 0
                    && x0 as i64 + compiled.max_ix + 1 < frame.width as i64
                    && y0 as i64 + compiled.min_iy >= 0
                    && y0 as i64 + compiled.max_iy + 1 < frame.height as i64;
                let base = y0 as i64 * frame.width as i64 + x0 as i64;
                for (sel, csel) in osf.selectors.iter().zip(&compiled.selectors) {
                    let want = fern_code(&patch, &sel.active().fern);
                    let mut got = 0usize;
                    for (j, (a, b)) in csel.taps.iter().enumerate() {
                        let (va, vb) = (a.sample(&frame, x0, y0), b.sample(&frame, x0, y0));
                        if interior {
                            // The unchecked interior sampler must agree
                            // byte-for-byte with the checked one.
                            let (ua, ub) = unsafe {
                                let p = frame.pixels.as_slice();
                                let w = frame.width as usize;
                                (
                                    a.sample_unchecked(p, w, base),
                                    b.sample_unchecked(p, w, base),
                                )
                            };
                            assert_eq!((ua, ub), (va, vb));
                        }
                        if va > vb {
                            got |= 1 << j;
                        }
                    }
                    assert_eq!(got, want, "size {size:?} origin ({x0},{y0})");
                }
            }
        }
    }

    fn resp(x: i32, y: i32, score: f64) -> DetectionResponse<f64> {
        DetectionResponse {
            bbox: BoundingBox::new(x, y, 10, 10),
            fern_score: score,
            region: Region::Positive,
            svm_margin: None,
            frame_index: 0,
            score,
        }
    }

    #[test]
    fn nms_single_response() {
        let r = [resp(0, 0, 0.9)];
        assert_eq!(nms(&r, 0.3).len(), 1);
    }

    #[test]
    fn nms_identical_boxes_keeps_highest() {
        let r = [resp(0, 0, 0.8), resp(0, 0, 0.9)];
        let kept = nms(&r, 0.3);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn nms_disjoint_boxes_all_kept() {
        let r = [resp(0, 0, 0.9), resp(50, 0, 0.2), resp(0, 50, 0.5)];
        assert_eq!(nms(&r, 0.3).len(), 3);
    }

    #[test]
    fn nms_output_pairwise_iou_bounded() {
        let r: Vec<_> = (0..20)
            .map(|i| resp(i * 3, 0, 1.0 - i as f64 * 0.01))
            .collect();
        let kept = nms(&r, 0.3);
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                assert!(iou(&a.bbox, &b.bbox) < 0.3);
            }
        }
    }
}
