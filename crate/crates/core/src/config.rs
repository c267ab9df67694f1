//! Run configuration shared by every command. Values are read from a TOML
//! document; unknown keys are rejected. CLI flags override file values.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::hog::HogParams;
use crate::num::Real;
use crate::svm::IsvmConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master RNG seed; every run is deterministic given this and the inputs.
    pub rng_seed: u64,

    // --- OSF classifier ---
    /// Number of selectors N (default 10).
    pub n_selectors: usize,
    /// Candidate ferns per selector M (default 10).
    pub m_candidates: usize,
    /// Binary features per fern s (default 6).
    pub fern_bits: usize,
    /// Posterior smoothing factor epsilon (default 0.01).
    pub epsilon: f64,
    /// Strong-classifier decision threshold (default 0.5).
    pub th_fern: f64,

    // --- Dual boundary / learner ---
    /// Decision hyperplane beta (default 0.5).
    pub beta: f64,
    /// Initial margin width theta_0 (default 1.0).
    pub theta0: f64,
    /// Margin learning-speed sensitivity nu (default 0.85).
    pub nu: f64,
    /// Learner exit threshold on theta (default 0.3).
    pub theta_stop: f64,
    /// Hard-sample count that triggers a retrain (default 100).
    pub hard_batch: usize,
    /// Random warps per seed box in the initial training set (default 2000).
    /// The warp count sets how much evidence the initial fern posteriors
    /// carry: too few and the first hard batches flip bins instantly, the
    /// agreement statistic saturates and the margin closes before background
    /// offenders have been mined; the default holds the margin open long
    /// enough for mining to drain them.
    pub warps_per_seed: usize,

    // --- Iterative SVM ---
    /// Positive promotion threshold on the SVM margin (default 0.8); the
    /// negative threshold is its mirror image.
    pub th_pos: f64,
    /// SVM regularization constant c (default 1.0).
    pub c_reg: f64,
    /// Hinge weight of promoted pseudo-labeled samples d (default 1.0).
    pub d_reg: f64,
    /// Iteration cap of the iterative SVM (default 20).
    pub isvm_max_iters: usize,

    // --- HOG ---
    /// Cell side in pixels (default 16).
    pub hog_cell: u32,
    /// Block side in cells (default 2).
    pub hog_block: u32,
    /// Block stride in cells (default 1).
    pub hog_block_stride: u32,
    /// Orientation bins over 0-180 degrees (default 9).
    pub hog_bins: usize,
    /// Block normalization constant (default 1e-6).
    pub hog_norm_epsilon: f64,

    // --- Detection ---
    /// Window scale count (default 11).
    pub n_scales: usize,
    /// Geometric ratio between adjacent scales (default 1.15).
    pub scale_ratio: f64,
    /// Window stride as a fraction of the window size (default 0.125).
    pub stride_frac: f64,
    /// NMS overlap threshold (default 0.3).
    pub nms_iou: f64,
    /// IoU threshold for ground-truth matching (default 0.5).
    pub match_iou: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            rng_seed: 0,
            n_selectors: 10,
            m_candidates: 10,
            fern_bits: 6,
            epsilon: 0.01,
            th_fern: 0.5,
            beta: 0.5,
            theta0: 1.0,
            nu: 0.85,
            theta_stop: 0.3,
            hard_batch: 100,
            warps_per_seed: 2000,
            th_pos: 0.8,
            c_reg: 1.0,
            d_reg: 1.0,
            isvm_max_iters: 20,
            hog_cell: 16,
            hog_block: 2,
            hog_block_stride: 1,
            hog_bins: 9,
            hog_norm_epsilon: 1e-6,
            n_scales: 11,
            scale_ratio: 1.15,
            stride_frac: 0.125,
            nms_iou: 0.3,
            match_iou: 0.5,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{path:?}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.n_selectors >= 1, "n_selectors must be >= 1"),
            (self.m_candidates >= 1, "m_candidates must be >= 1"),
            (
                (1..=16).contains(&self.fern_bits),
                "fern_bits must be in [1, 16]",
            ),
            (
                self.th_fern > 0.0 && self.th_fern < 1.0,
                "th_fern must be in (0, 1)",
            ),
            (
                self.beta > 0.0 && self.beta < 1.0,
                "beta must be in (0, 1)",
            ),
            (
                (0.0..=1.0).contains(&self.theta0),
                "theta0 must be in [0, 1]",
            ),
            (self.nu > 0.0 && self.nu <= 1.0, "nu must be in (0, 1]"),
            (
                self.theta_stop > 0.0 && self.theta_stop < 1.0,
                "theta_stop must be in (0, 1)",
            ),
            (self.hard_batch >= 1, "hard_batch must be >= 1"),
            (self.th_pos > 0.0, "th_pos must be positive"),
            (self.n_scales >= 1, "n_scales must be >= 1"),
            (self.scale_ratio > 1.0, "scale_ratio must be > 1"),
            (
                self.stride_frac > 0.0 && self.stride_frac <= 1.0,
                "stride_frac must be in (0, 1]",
            ),
            (
                self.nms_iou > 0.0 && self.nms_iou < 1.0,
                "nms_iou must be in (0, 1)",
            ),
            (
                self.match_iou > 0.0 && self.match_iou < 1.0,
                "match_iou must be in (0, 1)",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg.into()));
            }
        }
        Ok(())
    }

    pub fn hog_params<R: Real>(&self) -> HogParams<R> {
        HogParams {
            cell: self.hog_cell,
            block: self.hog_block,
            block_stride: self.hog_block_stride,
            bins: self.hog_bins,
            norm_epsilon: R::of(self.hog_norm_epsilon),
        }
    }

    pub fn isvm_config<R: Real>(&self) -> IsvmConfig<R> {
        IsvmConfig {
            th_pos: R::of(self.th_pos),
            d_reg: R::of(self.d_reg),
            c_reg: R::of(self.c_reg),
            max_iters: self.isvm_max_iters,
        }
    }
}
