//! Deterministic synthetic sequences: textured rectangles moving over a
//! cluttered background, with exact ground truth. Stands in for surveillance
//! footage in the end-to-end tests.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::imaging::{BoundingBox, Frame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub width: u32,
    pub height: u32,
    pub n_objects: usize,
    pub object_w: u32,
    pub object_h: u32,
    /// Horizontal speed in px/frame; objects move in lanes and bounce off
    /// the frame sides.
    pub speed: f64,
    /// Background clutter blobs per 1000 pixels.
    pub clutter_density: f64,
    /// Per-pixel Gaussian noise sigma.
    pub noise_sigma: f64,
    /// Per-frame multiplicative illumination jitter amplitude on objects.
    pub illumination_jitter: f64,
    pub n_frames: usize,
    pub rng_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 320,
            height: 240,
            n_objects: 2,
            object_w: 36,
            object_h: 36,
            speed: 2.0,
            clutter_density: 1.0,
            noise_sigma: 8.0,
            illumination_jitter: 0.05,
            n_frames: 500,
            rng_seed: 0,
        }
    }
}

struct MovingObject {
    texture: Vec<u8>, // object_w x object_h
    x: f64,
    y: f64,
    vx: f64,
}

fn draw_blobs(buf: &mut [u8], w: u32, h: u32, count: usize, rng: &mut ChaCha8Rng) {
    for _ in 0..count {
        let cx = rng.gen_range(0..w) as i64;
        let cy = rng.gen_range(0..h) as i64;
        let r = rng.gen_range(2..=6) as i64;
        // Clutter blobs are dark: a bright blob on the grain upsamples to a
        // bright-center radial patch at the small scan scales, which is the
        // moving objects' own signature.
        let value = rng.gen_range(0..=110u8);
        for y in (cy - r).max(0)..(cy + r + 1).min(h as i64) {
            for x in (cx - r).max(0)..(cx + r + 1).min(w as i64) {
                if (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r {
                    buf[(y * w as i64 + x) as usize] = value;
                }
            }
        }
    }
}

/// One standard normal draw (Box-Muller, single branch kept for determinism).
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Render the full sequence plus its ground truth. Identical configs yield
/// byte-identical output.
pub fn generate_sequence(config: &SceneConfig) -> Result<(Vec<Frame>, GroundTruth)> {
    assert!(config.n_frames >= 1);
    if config.n_objects > 0
        && (config.object_w >= config.width || config.object_h >= config.height)
    {
        return Err(Error::ObjectTooLarge(0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let (w, h) = (config.width, config.height);

    // Static cluttered background: soft elliptical shading with a strong
    // pixel-grain texture on top, like gravel under uneven light. The grain
    // dominates the local pixel ordering and sits well above the per-frame
    // noise floor, so the scenery looks the same from frame to frame down
    // to the pixel level; the shading stays below the grain amplitude so it
    // adds no object-scale structure of its own.
    let mut field = vec![0.0f64; (w * h) as usize];
    let n_mounds = (w * h / 900).max(1);
    for _ in 0..n_mounds {
        let cx = rng.gen_range(0.0..w as f64);
        let cy = rng.gen_range(0.0..h as f64);
        let radius = rng.gen_range(12.0..36.0);
        let aspect = rng.gen_range(1.2..2.4);
        let amp = rng.gen_range(10.0..20.0) * if rng.gen_range(0..2) == 0 { 1.0 } else { -1.0 };
        let x_lo = ((cx - radius * aspect).floor().max(0.0)) as u32;
        let x_hi = ((cx + radius * aspect).ceil().min(w as f64 - 1.0)) as u32;
        let y_lo = ((cy - radius).floor().max(0.0)) as u32;
        let y_hi = ((cy + radius).ceil().min(h as f64 - 1.0)) as u32;
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let r = ((x as f64 - cx) / aspect).hypot(y as f64 - cy) / radius;
                if r < 1.0 {
                    field[(y * w + x) as usize] += amp * (1.0 - r);
                }
            }
        }
    }
    let mut background = vec![0u8; (w * h) as usize];
    for (dst, v) in background.iter_mut().zip(&field) {
        let grain = rng.gen_range(-90.0..90.0);
        *dst = (128.0 + v + grain).clamp(0.0, 255.0) as u8;
    }
    let blob_count = (config.clutter_density * (w * h) as f64 / 1000.0).round() as usize;
    draw_blobs(&mut background, w, h, blob_count, &mut rng);

    // Objects run in horizontal lanes so ground truth never overlaps itself.
    let mut objects = Vec::with_capacity(config.n_objects);
    for i in 0..config.n_objects {
        let lane_h = h as f64 / config.n_objects.max(1) as f64;
        let y = ((i as f64 + 0.5) * lane_h - config.object_h as f64 / 2.0)
            .clamp(0.0, (h - config.object_h) as f64);
        // High-contrast radial intensity profile, same polarity for every
        // object (bright center, dark rim). Intensity depends only on the
        // distance from the patch center and falls off monotonically, so
        // every pixel-pair ordering inside the box survives shifts, scaling
        // and affine warps -- gross structure the way a real rigid object
        // has. The quartic falloff concentrates the contrast at the rim: a
        // small interior crop of the object spans only a sliver of the
        // intensity range and drowns in the per-frame noise, so crops do
        // not echo the object's orderings the way they would with a linear
        // ramp. A single polarity keeps the positive code manifold small:
        // with mixed polarities every smooth background patch matches one
        // object or the other, doubling the accidental-collision rate.
        let (hi, lo) = (235.0, 25.0);
        let (cx, cy) = (
            (config.object_w as f64 - 1.0) / 2.0,
            (config.object_h as f64 - 1.0) / 2.0,
        );
        let r_max = cx.hypot(cy);
        let mut texture = vec![0u8; (config.object_w * config.object_h) as usize];
        for ty in 0..config.object_h {
            for tx in 0..config.object_w {
                let r = (tx as f64 - cx).hypot(ty as f64 - cy) / r_max;
                let v = hi + (lo - hi) * r.powi(4);
                texture[(ty * config.object_w + tx) as usize] = v.clamp(0.0, 255.0) as u8;
            }
        }
        let x = rng.gen_range(0.0..(w - config.object_w) as f64);
        let vx = if i % 2 == 0 { config.speed } else { -config.speed };
        objects.push(MovingObject { texture, x, y, vx });
    }

    let mut frames = Vec::with_capacity(config.n_frames);
    let mut gt = GroundTruth::default();
    for t in 0..config.n_frames {
        let mut pixels = background.clone();
        let mut boxes = Vec::with_capacity(objects.len());
        for obj in &mut objects {
            let gain = 1.0 + rng.gen_range(-config.illumination_jitter..=config.illumination_jitter);
            let ox = obj.x.round() as u32;
            let oy = obj.y.round() as u32;
            for ty in 0..config.object_h {
                for tx in 0..config.object_w {
                    let v = obj.texture[(ty * config.object_w + tx) as usize] as f64 * gain;
                    pixels[((oy + ty) * w + ox + tx) as usize] = v.clamp(0.0, 255.0) as u8;
                }
            }
            boxes.push(BoundingBox::new(
                ox as i32,
                oy as i32,
                config.object_w,
                config.object_h,
            ));
            // Linear motion with bounce.
            obj.x += obj.vx;
            let max_x = (w - config.object_w) as f64;
            if obj.x < 0.0 {
                obj.x = -obj.x;
                obj.vx = -obj.vx;
            } else if obj.x > max_x {
                obj.x = 2.0 * max_x - obj.x;
                obj.vx = -obj.vx;
            }
        }
        if config.noise_sigma > 0.0 {
            for p in &mut pixels {
                let v = *p as f64 + config.noise_sigma * gaussian(&mut rng);
                *p = v.clamp(0.0, 255.0) as u8;
            }
        }
        frames.push(Frame::new(w, h, pixels, t));
        if !boxes.is_empty() {
            gt.per_frame.insert(t, boxes);
        }
    }
    Ok((frames, gt))
}
