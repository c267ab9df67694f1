//! Online selector ferns: local binary features, posterior-histogram weak
//! classifiers, Bhattacharyya-driven selectors and the OSF strong classifier.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Label, Patch, FERN_PATCH_SIDE};
use crate::num::Real;

pub const MAX_FERN_BITS: usize = 16;

/// Two pixel positions inside the canonical fern patch; the feature is the
/// comparison of their intensities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LbfPair {
    pub a: (u32, u32),
    pub b: (u32, u32),
}

/// An ordered set of `s` binary features; the joint outcome indexes one of
/// `2^s` codes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fern {
    pub pairs: Vec<LbfPair>,
}

impl Fern {
    pub fn bits(&self) -> usize {
        self.pairs.len()
    }

    pub fn code_count(&self) -> usize {
        1 << self.bits()
    }
}

/// Draw a fern of `s` distinct pixel pairs, `a != b`, uniformly over the
/// patch. Deterministic given the rng state.
pub fn sample_lbf(patch_side: u32, s: usize, rng: &mut impl Rng) -> Result<Fern> {
    if s > MAX_FERN_BITS {
        return Err(Error::TooManyBits(s));
    }
    assert!(s >= 1);
    let mut pairs: Vec<LbfPair> = Vec::with_capacity(s);
    while pairs.len() < s {
        let a = (rng.gen_range(0..patch_side), rng.gen_range(0..patch_side));
        let b = (rng.gen_range(0..patch_side), rng.gen_range(0..patch_side));
        if a == b {
            continue;
        }
        let pair = LbfPair { a, b };
        if pairs.contains(&pair) {
            continue;
        }
        pairs.push(pair);
    }
    Ok(Fern { pairs })
}

/// Evaluate the fern on a patch: bit j is 1 iff intensity(a_j) > intensity(b_j).
#[inline]
pub fn fern_code(patch: &Patch, fern: &Fern) -> usize {
    let mut code = 0usize;
    for (j, p) in fern.pairs.iter().enumerate() {
        if patch.get(p.a.0, p.a.1) > patch.get(p.b.0, p.b.1) {
            code |= 1 << j;
        }
    }
    code
}

/// Per-class fern code histograms. Counts are exact integers; probabilities
/// are derived lazily.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FernPosterior<R: Real> {
    pub pos_counts: Vec<u32>,
    pub neg_counts: Vec<u32>,
    pub epsilon: R,
}

impl<R: Real> FernPosterior<R> {
    pub fn new(bins: usize, epsilon: R) -> Self {
        FernPosterior {
            pos_counts: vec![0; bins],
            neg_counts: vec![0; bins],
            epsilon,
        }
    }

    pub fn bins(&self) -> usize {
        self.pos_counts.len()
    }

    pub fn update(&mut self, code: usize, label: Label) -> Result<()> {
        if code >= self.bins() {
            return Err(Error::CodeOutOfRange {
                code,
                bins: self.bins(),
            });
        }
        match label {
            Label::Positive => self.pos_counts[code] += 1,
            Label::Negative => self.neg_counts[code] += 1,
        }
        Ok(())
    }

    /// Class-conditional probability of `code`, zero when the class has no
    /// observations.
    fn class_prob(counts: &[u32], code: usize) -> f64 {
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        if total == 0 {
            0.0
        } else {
            counts[code] as f64 / total as f64
        }
    }

    /// Symmetrically smoothed weak confidence
    /// `h = (P+ + eps) / (P+ + P- + 2 eps)`; 0.5 for never-seen codes.
    pub fn weak_confidence(&self, code: usize) -> R {
        let p_pos = Self::class_prob(&self.pos_counts, code);
        let p_neg = Self::class_prob(&self.neg_counts, code);
        let eps = self.epsilon.as_f64();
        R::of((p_pos + eps) / (p_pos + p_neg + 2.0 * eps))
    }

    /// Bhattacharyya overlap `B = 2 sum_k sqrt(P+(k) P-(k))` over all codes,
    /// per-class normalized. A class with no observations contributes an
    /// all-zero distribution.
    pub fn bhattacharyya(&self) -> R {
        let pos_total: u64 = self.pos_counts.iter().map(|&c| c as u64).sum();
        let neg_total: u64 = self.neg_counts.iter().map(|&c| c as u64).sum();
        if pos_total == 0 || neg_total == 0 {
            return R::zero();
        }
        let mut sum = 0.0;
        for k in 0..self.bins() {
            let p = self.pos_counts[k] as f64 / pos_total as f64;
            let q = self.neg_counts[k] as f64 / neg_total as f64;
            sum += (p * q).sqrt();
        }
        R::of(2.0 * sum)
    }
}

/// One candidate weak classifier: a fern plus its posterior histograms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate<R: Real> {
    pub fern: Fern,
    pub posterior: FernPosterior<R>,
}

/// Pool of M candidate ferns with one active choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selector<R: Real> {
    pub candidates: Vec<Candidate<R>>,
    pub chosen: usize,
}

impl<R: Real> Selector<R> {
    /// Re-pick the candidate minimizing the Bhattacharyya overlap; ties go to
    /// the lowest index.
    pub fn select_best(&mut self) -> usize {
        let mut best = 0;
        let mut best_b = self.candidates[0].posterior.bhattacharyya();
        for (i, cand) in self.candidates.iter().enumerate().skip(1) {
            let b = cand.posterior.bhattacharyya();
            if b < best_b {
                best = i;
                best_b = b;
            }
        }
        self.chosen = best;
        best
    }

    pub fn active(&self) -> &Candidate<R> {
        &self.candidates[self.chosen]
    }
}

/// The OSF strong classifier: N selectors averaged into a score in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OsfClassifier<R: Real> {
    pub selectors: Vec<Selector<R>>,
    pub th_fern: R,
    pub rng_seed: u64,
}

impl<R: Real> OsfClassifier<R> {
    pub fn new(
        n_selectors: usize,
        m_candidates: usize,
        s_bits: usize,
        epsilon: R,
        th_fern: R,
        rng_seed: u64,
    ) -> Result<Self> {
        assert!(n_selectors >= 1 && m_candidates >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let bins = 1usize
            .checked_shl(s_bits as u32)
            .ok_or(Error::TooManyBits(s_bits))?;
        if s_bits > MAX_FERN_BITS {
            return Err(Error::TooManyBits(s_bits));
        }
        let mut selectors = Vec::with_capacity(n_selectors);
        for _ in 0..n_selectors {
            let mut candidates = Vec::with_capacity(m_candidates);
            for _ in 0..m_candidates {
                candidates.push(Candidate {
                    fern: sample_lbf(FERN_PATCH_SIDE, s_bits, &mut rng)?,
                    posterior: FernPosterior::new(bins, epsilon),
                });
            }
            selectors.push(Selector {
                candidates,
                chosen: 0,
            });
        }
        Ok(OsfClassifier {
            selectors,
            th_fern,
            rng_seed,
        })
    }

    /// Raw pre-sign average of the active weak confidences; 0.5 when untrained.
    pub fn score(&self, patch: &Patch) -> R {
        let sum: R = self
            .selectors
            .iter()
            .map(|sel| {
                let active = sel.active();
                active
                    .posterior
                    .weak_confidence(fern_code(patch, &active.fern))
            })
            .sum();
        sum / R::of_usize(self.selectors.len())
    }

    /// Binary decision of the strong classifier: `score > th_fern`.
    pub fn decision(&self, patch: &Patch) -> bool {
        self.score(patch) > self.th_fern
    }

    /// Online training: every candidate posterior in every selector is
    /// updated at each sample's fern code, then the selectors re-pick their
    /// active fern. Empty input is a no-op.
    pub fn train_online<'a, I>(&mut self, samples: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a Patch, Label)>,
    {
        let mut any = false;
        for (patch, label) in samples {
            patch.expect_side(FERN_PATCH_SIDE)?;
            any = true;
            for sel in &mut self.selectors {
                for cand in &mut sel.candidates {
                    let code = fern_code(patch, &cand.fern);
                    cand.posterior.update(code, label)?;
                }
            }
        }
        if any {
            for sel in &mut self.selectors {
                sel.select_best();
            }
        }
        Ok(())
    }
}
