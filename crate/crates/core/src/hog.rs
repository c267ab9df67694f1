//! Histogram-of-oriented-gradients descriptor over the 64x64 canonical patch.
//!
//! Centered [-1, 0, 1] gradients with border replicate, unsigned orientation
//! over 180 degrees, bilinear voting into orientation bins and neighboring
//! cells, per-block L2 normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Patch;
use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HogParams<R: Real> {
    /// Cell side in pixels.
    pub cell: u32,
    /// Block side in cells.
    pub block: u32,
    /// Block stride in cells.
    pub block_stride: u32,
    /// Orientation bins over the unsigned 0-180 degree range.
    pub bins: usize,
    pub norm_epsilon: R,
}

impl<R: Real> Default for HogParams<R> {
    fn default() -> Self {
        HogParams {
            cell: 16,
            block: 2,
            block_stride: 1,
            bins: 9,
            norm_epsilon: R::of(1e-6),
        }
    }
}

impl<R: Real> HogParams<R> {
    pub fn cells_per_side(&self, patch_side: u32) -> Result<u32> {
        if self.cell == 0 || !patch_side.is_multiple_of(self.cell) {
            return Err(Error::HogGeometry {
                patch: patch_side,
                cell: self.cell,
            });
        }
        let cells = patch_side / self.cell;
        if self.block > cells || self.block_stride == 0 {
            return Err(Error::HogGeometry {
                patch: patch_side,
                cell: self.cell,
            });
        }
        Ok(cells)
    }

    /// Descriptor dimension for a square patch of the given side.
    pub fn descriptor_len(&self, patch_side: u32) -> Result<usize> {
        let cells = self.cells_per_side(patch_side)?;
        let blocks = (cells - self.block) / self.block_stride + 1;
        Ok((blocks * blocks) as usize * (self.block * self.block) as usize * self.bins)
    }
}

/// Gradient magnitude and unsigned angle for every integer (gx, gy) pair.
/// Pixel values are u8, so centered differences take only 511 values per
/// axis; tabulating them removes the per-pixel atan2/sqrt, which dominate
/// descriptor cost. Entries are computed with the exact expressions the
/// direct code used, so results are bit-identical.
fn gradient_table() -> &'static [(f64, f64)] {
    static TABLE: std::sync::OnceLock<Vec<(f64, f64)>> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = Vec::with_capacity(511 * 511);
        for gx in -255..=255i32 {
            for gy in -255..=255i32 {
                let (gx, gy) = (gx as f64, gy as f64);
                let mag = (gx * gx + gy * gy).sqrt();
                let mut angle = gy.atan2(gx).to_degrees();
                if angle < 0.0 {
                    angle += 180.0;
                }
                if angle >= 180.0 {
                    angle -= 180.0;
                }
                table.push((mag, angle));
            }
        }
        table
    })
}

/// Compute the HOG descriptor of a canonical patch.
pub fn compute_hog<R: Real>(patch: &Patch, params: &HogParams<R>) -> Result<Vec<R>> {
    let side = patch.side;
    let cells = params.cells_per_side(side)? as i64;
    let bins = params.bins;
    let cell = params.cell as f64;

    // Cell histograms with bilinear spatial and orientation voting.
    let mut hist = vec![0.0f64; (cells * cells) as usize * bins];
    let bin_width = 180.0 / bins as f64;
    let last = (side - 1) as i64;
    let at = |x: i64, y: i64| patch.get(x.clamp(0, last) as u32, y.clamp(0, last) as u32) as i32;
    let table = gradient_table();
    for y in 0..side as i64 {
        for x in 0..side as i64 {
            let gx = at(x + 1, y) - at(x - 1, y);
            let gy = at(x, y + 1) - at(x, y - 1);
            let (mag, angle) = table[((gx + 255) * 511 + gy + 255) as usize];
            if mag == 0.0 {
                continue;
            }
            // Orientation bins are centered at k * bin_width, circular.
            let t = angle / bin_width;
            let k0 = t.floor() as usize;
            let wo = t - k0 as f64;
            let b0 = k0 % bins;
            let b1 = (k0 + 1) % bins;
            // Cell centers sit at (c + 0.5) * cell - 0.5.
            let u = (x as f64 + 0.5) / cell - 0.5;
            let v = (y as f64 + 0.5) / cell - 0.5;
            let cu = u.floor() as i64;
            let cv = v.floor() as i64;
            let wu = u - cu as f64;
            let wv = v - cv as f64;
            for (cx, wx) in [(cu, 1.0 - wu), (cu + 1, wu)] {
                if cx < 0 || cx >= cells || wx == 0.0 {
                    continue;
                }
                for (cy, wy) in [(cv, 1.0 - wv), (cv + 1, wv)] {
                    if cy < 0 || cy >= cells || wy == 0.0 {
                        continue;
                    }
                    let base = ((cy * cells + cx) as usize) * bins;
                    hist[base + b0] += mag * wx * wy * (1.0 - wo);
                    hist[base + b1] += mag * wx * wy * wo;
                }
            }
        }
    }

    // Concatenate block-normalized cell histograms.
    let block = params.block as i64;
    let stride = params.block_stride as i64;
    let eps = params.norm_epsilon.as_f64();
    let mut descriptor = Vec::with_capacity(params.descriptor_len(side)?);
    let mut by = 0;
    while by + block <= cells {
        let mut bx = 0;
        while bx + block <= cells {
            let mut values = Vec::with_capacity((block * block) as usize * bins);
            for cy in by..by + block {
                for cx in bx..bx + block {
                    let base = ((cy * cells + cx) as usize) * bins;
                    values.extend_from_slice(&hist[base..base + bins]);
                }
            }
            let norm = (values.iter().map(|v| v * v).sum::<f64>() + eps).sqrt();
            descriptor.extend(values.iter().map(|v| R::of(v / norm)));
            bx += stride;
        }
        by += stride;
    }
    Ok(descriptor)
}
