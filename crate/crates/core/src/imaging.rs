//! Frame ingestion, patch extraction and affine sample synthesis.
//!
//! All resampling is bilinear with reads clamped to the frame border and the
//! interpolated value rounded half-up to u8. Patch pixel `(i, j)` of an
//! `side`-pixel patch samples the source at `origin + (i + 0.5) * extent /
//! side - 0.5`, so extracting a box that exactly covers an equally sized
//! frame is an identity copy.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::iou;

/// Canonical patch side for fern evaluation.
pub const FERN_PATCH_SIDE: u32 = 32;
/// Canonical patch side for HOG descriptors.
pub const HOG_PATCH_SIDE: u32 = 64;

/// Maximum overlap a bootstrap negative may have with any seed box.
pub const NEGATIVE_IOU_MAX: f64 = 0.2;
/// Bootstrap negatives per positive sample.
pub const NEGATIVES_PER_POSITIVE: usize = 2;

/// Single-channel intensity image within a sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    /// Row-major intensities, length = width * height.
    pub pixels: Vec<u8>,
    /// 0-based position in the sequence.
    pub index: usize,
}

impl Frame {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>, index: usize) -> Self {
        assert!(width >= 1 && height >= 1);
        assert_eq!(pixels.len(), (width * height) as usize);
        Frame {
            width,
            height,
            pixels,
            index,
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[(y * self.width + x) as usize]
    }

    /// Bilinear sample at a continuous coordinate, clamped to the border.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> u8 {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = xc.floor();
        let y0 = yc.floor();
        let fx = xc - x0;
        let fy = yc - y0;
        let x0 = x0 as u32;
        let y0 = y0 as u32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let p00 = self.get(x0, y0) as f64;
        let p10 = self.get(x1, y0) as f64;
        let p01 = self.get(x0, y1) as f64;
        let p11 = self.get(x1, y1) as f64;
        let v = p00 * (1.0 - fx) * (1.0 - fy)
            + p10 * fx * (1.0 - fy)
            + p01 * (1.0 - fx) * fy
            + p11 * fx * fy;
        round_u8(v)
    }
}

/// Round half-up to u8; the one rounding convention used everywhere.
#[inline]
pub fn round_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Axis-aligned box, top-left origin, pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: i32,
    pub y: i32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub fn new(x: i32, y: i32, w: u32, h: u32) -> Self {
        assert!(w >= 1 && h >= 1);
        BoundingBox { x, y, w, h }
    }

    pub fn right(&self) -> i32 {
        self.x + self.w as i32
    }

    pub fn bottom(&self) -> i32 {
        self.y + self.h as i32
    }

    /// Clip to the frame extent; `None` if the intersection is empty.
    pub fn clip(&self, width: u32, height: u32) -> Option<BoundingBox> {
        let x0 = self.x.max(0);
        let y0 = self.y.max(0);
        let x1 = self.right().min(width as i32);
        let y1 = self.bottom().min(height as i32);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(BoundingBox::new(x0, y0, (x1 - x0) as u32, (y1 - y0) as u32))
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }
}

/// Square intensity patch at one of the canonical resolutions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub side: u32,
    pub data: Vec<u8>,
}

impl Patch {
    pub fn new(side: u32, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), (side * side) as usize);
        Patch { side, data }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[(y * self.side + x) as usize]
    }

    pub fn expect_side(&self, want: u32) -> Result<()> {
        if self.side != want {
            return Err(Error::PatchSizeMismatch {
                got: self.side,
                want,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    SeedWarp,
    AutoCollected,
    PseudoLabeled,
}

/// A training sample carrying both canonical patch resolutions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub fern_patch: Patch,
    pub hog_patch: Patch,
    pub label: Label,
    pub provenance: Provenance,
}

/// Affine warp parameters applied about the box center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub scale: f64,
    pub rotation: f64,
    pub shear: f64,
    pub dx: f64,
    pub dy: f64,
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        scale: 1.0,
        rotation: 0.0,
        shear: 0.0,
        dx: 0.0,
        dy: 0.0,
    };

    /// Random params within the sampling ranges used for seed augmentation.
    pub fn random(rng: &mut impl Rng, box_w: u32, box_h: u32) -> AffineParams {
        let tmax_x = 0.05 * box_w as f64;
        let tmax_y = 0.05 * box_h as f64;
        AffineParams {
            scale: rng.gen_range(0.9..=1.1),
            rotation: rng.gen_range(-0.1..=0.1),
            shear: rng.gen_range(-0.05..=0.05),
            dx: rng.gen_range(-tmax_x..=tmax_x),
            dy: rng.gen_range(-tmax_y..=tmax_y),
        }
    }

    /// Forward 2x2 matrix: scale * rotation * shear.
    fn matrix(&self) -> [f64; 4] {
        let (sin, cos) = self.rotation.sin_cos();
        // R * K with K = [1 shear; 0 1]
        let a = cos;
        let b = cos * self.shear - sin;
        let c = sin;
        let d = sin * self.shear + cos;
        [a * self.scale, b * self.scale, c * self.scale, d * self.scale]
    }
}

/// Load a frame from a PGM/PNG file, converting color by 0.299/0.587/0.114
/// luma weights.
pub fn load_frame(path: &Path, index: usize) -> Result<Frame> {
    let img = image::open(path).map_err(|source| Error::ImageRead {
        path: path.to_path_buf(),
        source,
    })?;
    let (width, height) = (img.width(), img.height());
    if width == 0 || height == 0 {
        return Err(Error::ZeroAreaImage(path.to_path_buf()));
    }
    let pixels = match img {
        image::DynamicImage::ImageLuma8(g) => g.into_raw(),
        other => {
            let rgb = other.to_rgb8();
            rgb.pixels()
                .map(|p| {
                    round_u8(0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
                })
                .collect()
        }
    };
    Ok(Frame::new(width, height, pixels, index))
}

/// Bilinear resample of the clipped box to a `target`-pixel square patch.
pub fn extract_patch(frame: &Frame, bbox: &BoundingBox, target: u32) -> Result<Patch> {
    let clipped = bbox
        .clip(frame.width, frame.height)
        .ok_or(Error::BoxOutsideFrame(*bbox))?;
    let mut data = Vec::with_capacity((target * target) as usize);
    let sx = clipped.w as f64 / target as f64;
    let sy = clipped.h as f64 / target as f64;
    for j in 0..target {
        let y = clipped.y as f64 + (j as f64 + 0.5) * sy - 0.5;
        for i in 0..target {
            let x = clipped.x as f64 + (i as f64 + 0.5) * sx - 0.5;
            data.push(frame.sample_bilinear(x, y));
        }
    }
    Ok(Patch::new(target, data))
}

/// Inverse-mapped affine sampling of `bbox` under `params`, resampled to a
/// `target`-pixel square. Out-of-frame reads clamp to the border. With
/// identity params and an in-frame box this equals [`extract_patch`]
/// bit-exactly.
pub fn warp_affine(
    frame: &Frame,
    bbox: &BoundingBox,
    params: &AffineParams,
    target: u32,
) -> Result<Patch> {
    let m = params.matrix();
    let det = m[0] * m[3] - m[1] * m[2];
    if det.abs() < 1e-6 {
        return Err(Error::DegenerateTransform(det.abs()));
    }
    let inv = [m[3] / det, -m[1] / det, -m[2] / det, m[0] / det];
    let (cx, cy) = bbox.center();

    // Warped quadrilateral must intersect the frame.
    let corners = [
        (bbox.x as f64, bbox.y as f64),
        (bbox.right() as f64, bbox.y as f64),
        (bbox.x as f64, bbox.bottom() as f64),
        (bbox.right() as f64, bbox.bottom() as f64),
    ];
    let inside = corners.iter().any(|&(px, py)| {
        let x = m[0] * (px - cx) + m[1] * (py - cy) + cx + params.dx;
        let y = m[2] * (px - cx) + m[3] * (py - cy) + cy + params.dy;
        x >= 0.0 && y >= 0.0 && x < frame.width as f64 && y < frame.height as f64
    });
    if !inside {
        return Err(Error::BoxOutsideFrame(*bbox));
    }

    let sx = bbox.w as f64 / target as f64;
    let sy = bbox.h as f64 / target as f64;
    let mut data = Vec::with_capacity((target * target) as usize);
    for j in 0..target {
        let py = bbox.y as f64 + (j as f64 + 0.5) * sy - 0.5;
        for i in 0..target {
            let px = bbox.x as f64 + (i as f64 + 0.5) * sx - 0.5;
            // Inverse map: where in the source did this warped point come from.
            let rx = px - cx - params.dx;
            let ry = py - cy - params.dy;
            let x = inv[0] * rx + inv[1] * ry + cx;
            let y = inv[2] * rx + inv[3] * ry + cy;
            data.push(frame.sample_bilinear(x, y));
        }
    }
    Ok(Patch::new(target, data))
}

fn sample_at(frame: &Frame, bbox: &BoundingBox, params: &AffineParams) -> Result<Sample> {
    Ok(Sample {
        fern_patch: warp_affine(frame, bbox, params, FERN_PATCH_SIDE)?,
        hog_patch: warp_affine(frame, bbox, params, HOG_PATCH_SIDE)?,
        label: Label::Negative,
        provenance: Provenance::SeedWarp,
    })
}

/// Build the initial training set from seed boxes: every seed patch plus
/// `warps_per_seed` random warps as positives, and twice as many random
/// low-overlap background patches (one random warp each) as negatives.
pub fn generate_initial_samples(
    frame: &Frame,
    seeds: &[BoundingBox],
    warps_per_seed: usize,
    rng_seed: u64,
) -> Result<Vec<Sample>> {
    generate_initial_samples_with_boxes(frame, seeds, warps_per_seed, rng_seed).map(|(s, _)| s)
}

/// Same as [`generate_initial_samples`], also returning the boxes the
/// negatives were drawn from.
pub fn generate_initial_samples_with_boxes(
    frame: &Frame,
    seeds: &[BoundingBox],
    warps_per_seed: usize,
    rng_seed: u64,
) -> Result<(Vec<Sample>, Vec<BoundingBox>)> {
    if seeds.is_empty() {
        return Err(Error::NoSeeds);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut samples = Vec::new();

    for seed in seeds {
        let mut s = Sample {
            fern_patch: extract_patch(frame, seed, FERN_PATCH_SIDE)?,
            hog_patch: extract_patch(frame, seed, HOG_PATCH_SIDE)?,
            label: Label::Positive,
            provenance: Provenance::SeedWarp,
        };
        samples.push(s.clone());
        for _ in 0..warps_per_seed {
            let params = AffineParams::random(&mut rng, seed.w, seed.h);
            s = sample_at(frame, seed, &params)?;
            s.label = Label::Positive;
            samples.push(s);
        }
    }

    let n_pos = samples.len();
    let n_neg = NEGATIVES_PER_POSITIVE * n_pos;
    let mut neg_boxes = Vec::with_capacity(n_neg);
    let mut attempts = 0;
    let max_attempts = 1000 * n_neg;
    while neg_boxes.len() < n_neg {
        if attempts >= max_attempts {
            return Err(Error::NoNegativeSpace);
        }
        attempts += 1;
        // Spread negatives across the scale range the detector will scan, so
        // the classifier sees background at every resampling regime.
        let basis = seeds[rng.gen_range(0..seeds.len())];
        let scale = rng.gen_range(0.5..=2.0);
        let w = ((basis.w as f64 * scale).round() as u32).max(1);
        let h = ((basis.h as f64 * scale).round() as u32).max(1);
        if w >= frame.width || h >= frame.height {
            continue;
        }
        let x = rng.gen_range(0..=(frame.width - w)) as i32;
        let y = rng.gen_range(0..=(frame.height - h)) as i32;
        let cand = BoundingBox::new(x, y, w, h);
        if seeds.iter().any(|s| iou(&cand, s) >= NEGATIVE_IOU_MAX) {
            continue;
        }
        let params = AffineParams::random(&mut rng, w, h);
        let s = sample_at(frame, &cand, &params)?;
        samples.push(s);
        neg_boxes.push(cand);
    }
    Ok((samples, neg_boxes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker() -> Frame {
        Frame::new(2, 2, vec![0, 255, 255, 0], 0)
    }

    #[test]
    fn identity_extract_is_copy() {
        let px: Vec<u8> = (0..32 * 32).map(|i| (i % 251) as u8).collect();
        let f = Frame::new(32, 32, px.clone(), 0);
        let p = extract_patch(&f, &BoundingBox::new(0, 0, 32, 32), 32).unwrap();
        assert_eq!(p.data, px);
    }

    #[test]
    fn constant_region_stays_constant() {
        let f = Frame::new(20, 20, vec![99; 400], 0);
        let p = extract_patch(&f, &BoundingBox::new(3, 3, 10, 10), 32).unwrap();
        assert!(p.data.iter().all(|&v| v == 99));
    }

    #[test]
    fn checkerboard_upsample_matches_bilinear_oracle() {
        // Direct bilinear evaluation oracle on the 2x2 checkerboard at 4x4.
        let f = checker();
        let p = extract_patch(&f, &BoundingBox::new(0, 0, 2, 2), 4).unwrap();
        for j in 0..4u32 {
            for i in 0..4u32 {
                let x = (i as f64 + 0.5) * 0.5 - 0.5;
                let y = (j as f64 + 0.5) * 0.5 - 0.5;
                assert_eq!(p.get(i, j), f.sample_bilinear(x, y));
            }
        }
        // Hand-computed: (1,1) lands at (0.25, 0.25), 255 * 0.375 = 95.625.
        assert_eq!(p.get(1, 1), 96);
    }

    #[test]
    fn box_fully_outside_errors() {
        let f = checker();
        assert!(matches!(
            extract_patch(&f, &BoundingBox::new(10, 10, 4, 4), 8),
            Err(Error::BoxOutsideFrame(_))
        ));
    }

    #[test]
    fn identity_warp_equals_extract() {
        let px: Vec<u8> = (0..64 * 64).map(|i| (i * 7 % 256) as u8).collect();
        let f = Frame::new(64, 64, px, 0);
        let b = BoundingBox::new(5, 9, 40, 30);
        let a = extract_patch(&f, &b, 32).unwrap();
        let w = warp_affine(&f, &b, &AffineParams::IDENTITY, 32).unwrap();
        assert_eq!(a, w);
    }

    #[test]
    fn rotation_pi_on_symmetric_patch() {
        // 180-degree rotation of a point-symmetric image leaves it unchanged.
        let mut px = vec![0u8; 16 * 16];
        for j in 0..16 {
            for i in 0..16 {
                let v = ((i as i32 - 8).abs() + (j as i32 - 8).abs()) * 10;
                px[j * 16 + i] = v.min(255) as u8;
            }
        }
        let f = Frame::new(16, 16, px, 0);
        let b = BoundingBox::new(4, 4, 8, 8);
        let params = AffineParams {
            rotation: std::f64::consts::PI,
            ..AffineParams::IDENTITY
        };
        let plain = extract_patch(&f, &b, 8).unwrap();
        let rotated = warp_affine(&f, &b, &params, 8).unwrap();
        assert_eq!(plain, rotated);
    }

    #[test]
    fn scale_on_constant_region_is_constant() {
        let f = Frame::new(40, 40, vec![77; 1600], 0);
        let params = AffineParams {
            scale: 1.1,
            ..AffineParams::IDENTITY
        };
        let p = warp_affine(&f, &BoundingBox::new(10, 10, 16, 16), &params, 32).unwrap();
        assert!(p.data.iter().all(|&v| v == 77));
    }

    #[test]
    fn degenerate_transform_rejected() {
        let f = checker();
        let params = AffineParams {
            scale: 1e-4,
            ..AffineParams::IDENTITY
        };
        assert!(matches!(
            warp_affine(&f, &BoundingBox::new(0, 0, 2, 2), &params, 4),
            Err(Error::DegenerateTransform(_))
        ));
    }

    fn textured_frame(w: u32, h: u32) -> Frame {
        let px = (0..w * h).map(|i| (i * 31 % 256) as u8).collect();
        Frame::new(w, h, px, 0)
    }

    #[test]
    fn initial_sample_counts() {
        let f = textured_frame(200, 200);
        let seeds = [
            BoundingBox::new(10, 10, 30, 30),
            BoundingBox::new(80, 80, 30, 30),
            BoundingBox::new(150, 20, 30, 30),
        ];
        let samples = generate_initial_samples(&f, &seeds, 50, 7).unwrap();
        let pos = samples.iter().filter(|s| s.label == Label::Positive).count();
        assert_eq!(pos, 153);
        assert_eq!(samples.len() - pos, 2 * 153);
    }

    #[test]
    fn zero_warps_minimal_set() {
        let f = textured_frame(100, 100);
        let seeds = [BoundingBox::new(40, 40, 20, 20)];
        let samples = generate_initial_samples(&f, &seeds, 0, 1).unwrap();
        let pos = samples.iter().filter(|s| s.label == Label::Positive).count();
        assert_eq!(pos, 1);
        assert_eq!(samples.len(), 3);
    }

    #[test]
    fn negatives_respect_iou_bound() {
        let f = textured_frame(200, 160);
        let seeds = [
            BoundingBox::new(10, 10, 30, 30),
            BoundingBox::new(120, 90, 36, 36),
        ];
        let (_, negs) = generate_initial_samples_with_boxes(&f, &seeds, 20, 3).unwrap();
        for nb in &negs {
            for s in &seeds {
                assert!(iou(nb, s) < NEGATIVE_IOU_MAX);
            }
        }
    }

    #[test]
    fn initial_samples_deterministic() {
        let f = textured_frame(120, 120);
        let seeds = [BoundingBox::new(20, 30, 24, 24)];
        let a = generate_initial_samples(&f, &seeds, 10, 42).unwrap();
        let b = generate_initial_samples(&f, &seeds, 10, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_seed_list_errors() {
        let f = textured_frame(100, 100);
        assert!(matches!(
            generate_initial_samples(&f, &[], 5, 0),
            Err(Error::NoSeeds)
        ));
    }
}
