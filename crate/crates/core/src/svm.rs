//! Soft-margin linear SVM (dual coordinate descent) and the iterative
//! self-training SVM that pseudo-labels hard samples.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Label;
use crate::num::Real;

/// Scale of the constant bias feature used by the inner dual solves. Kept at
/// 1 so the bias feature does not dominate the Gram diagonal.
const BIAS_FEATURE: f64 = 1.0;
/// Total epoch budget shared by all inner solves; alpha stays warm across
/// folds, so later solves reuse earlier work.
const MAX_EPOCHS: usize = 2000;
/// Projected-gradient violation tolerance for one inner dual solve.
const PG_TOL: f64 = 1e-2;
/// Outer proximal iterations folding the bias feature into the offset.
const MAX_OUTER: usize = 50;
/// Stop folding once the regularized bias component is this small. The
/// exact 1-D bias refit at the end removes the residual, so this only
/// needs to be tight enough for the weight vector.
const BIAS_FOLD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvmModel<R: Real> {
    pub weights: Vec<R>,
    pub bias: R,
    pub c_reg: R,
}

impl<R: Real> LinearSvmModel<R> {
    /// Signed margin `W . x + b`. Predicted label is `sign(margin)` with
    /// `sign(0)` negative.
    pub fn margin(&self, desc: &[R]) -> Result<R> {
        if desc.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                got: desc.len(),
                want: self.weights.len(),
            });
        }
        let dot: R = self
            .weights
            .iter()
            .zip(desc)
            .map(|(&w, &x)| w * x)
            .sum();
        Ok(dot + self.bias)
    }

    pub fn predict(&self, desc: &[R]) -> Result<Label> {
        Ok(if self.margin(desc)? > R::zero() {
            Label::Positive
        } else {
            Label::Negative
        })
    }
}

/// Signed margin as a free function.
pub fn svm_score<R: Real>(model: &LinearSvmModel<R>, desc: &[R]) -> Result<R> {
    model.margin(desc)
}

fn label_sign(label: Label) -> f64 {
    match label {
        Label::Positive => 1.0,
        Label::Negative => -1.0,
    }
}

/// Primal objective `0.5 ||W||^2 + sum_i cost_i * hinge_i` for per-sample
/// costs. Used by training and by the optimality oracles in tests.
pub fn primal_objective<R: Real>(
    weights: &[R],
    bias: R,
    samples: &[(Vec<R>, Label)],
    costs: &[f64],
) -> f64 {
    let w: Vec<f64> = weights.iter().map(|v| v.as_f64()).collect();
    let b = bias.as_f64();
    let mut obj = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    for ((x, label), &cost) in samples.iter().zip(costs) {
        let dot: f64 = w.iter().zip(x).map(|(wi, xi)| wi * xi.as_f64()).sum();
        let slack = (1.0 - label_sign(*label) * (dot + b)).max(0.0);
        obj += cost * slack;
    }
    obj
}

/// Train a soft-margin linear SVM with a uniform regularization constant.
pub fn svm_train<R: Real>(samples: &[(Vec<R>, Label)], c_reg: R) -> Result<LinearSvmModel<R>> {
    let costs = vec![c_reg.as_f64(); samples.len()];
    svm_train_weighted(samples, &costs, c_reg)
}

/// Train with a per-sample cost (hinge weight). All descriptors must share
/// one dimension and both classes must be present.
pub fn svm_train_weighted<R: Real>(
    samples: &[(Vec<R>, Label)],
    costs: &[f64],
    c_reg: R,
) -> Result<LinearSvmModel<R>> {
    let mut warm = vec![0.0; samples.len()];
    svm_train_warm(samples, costs, c_reg, &mut warm)
}

/// [`svm_train_weighted`] with caller-held dual variables. Starting from the
/// alphas of a previous solve over a prefix of the same samples cuts the
/// epochs needed to re-converge after appending a few samples.
pub(crate) fn svm_train_warm<R: Real>(
    samples: &[(Vec<R>, Label)],
    costs: &[f64],
    c_reg: R,
    warm_alpha: &mut Vec<f64>,
) -> Result<LinearSvmModel<R>> {
    let has_pos = samples.iter().any(|(_, l)| *l == Label::Positive);
    let has_neg = samples.iter().any(|(_, l)| *l == Label::Negative);
    if !has_pos || !has_neg {
        return Err(Error::SingleClass);
    }
    let dim = samples[0].0.len();
    for (x, _) in samples {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                got: x.len(),
                want: dim,
            });
        }
    }
    let n = samples.len();
    let x: Vec<Vec<f64>> = samples
        .iter()
        .map(|(v, _)| v.iter().map(|e| e.as_f64()).collect())
        .collect();
    let y: Vec<f64> = samples.iter().map(|(_, l)| label_sign(*l)).collect();
    // Diagonal of the augmented Gram matrix.
    let q: Vec<f64> = x
        .iter()
        .map(|xi| xi.iter().map(|v| v * v).sum::<f64>() + BIAS_FEATURE * BIAS_FEATURE)
        .collect();

    // Proximal-point treatment of the unregularized bias: each inner dual
    // coordinate-descent solve carries a regularized bias feature on top of
    // a fixed offset b0; folding the learned component into b0 and
    // re-solving drives the regularized part to zero, so the fixpoint
    // optimizes the true objective with a free bias.
    warm_alpha.resize(n, 0.0);
    let mut alpha = std::mem::take(warm_alpha);
    let mut w = vec![0.0f64; dim];
    let mut wb = 0.0f64; // weight on the bias feature; total bias = b0 + wb*B
    let mut b0 = 0.0f64;
    for i in 0..n {
        alpha[i] = alpha[i].clamp(0.0, costs[i]);
        if alpha[i] != 0.0 {
            let delta = alpha[i] * y[i];
            for (wj, xj) in w.iter_mut().zip(&x[i]) {
                *wj += delta * xj;
            }
            wb += delta * BIAS_FEATURE;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);

    let mut epochs_left = MAX_EPOCHS;
    'outer: for _ in 0..MAX_OUTER {
        loop {
            if epochs_left == 0 {
                break 'outer;
            }
            epochs_left -= 1;
            order.shuffle(&mut rng);
            let mut max_violation = 0.0f64;
            for &i in &order {
                let xi = &x[i];
                let dot: f64 = w.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>()
                    + wb * BIAS_FEATURE
                    + b0;
                let g = y[i] * dot - 1.0;
                let c = costs[i];
                // Projected gradient for the box constraint 0 <= alpha <= c.
                let pg = if alpha[i] <= 0.0 {
                    g.min(0.0)
                } else if alpha[i] >= c {
                    g.max(0.0)
                } else {
                    g
                };
                max_violation = max_violation.max(pg.abs());
                if pg.abs() > 1e-14 {
                    let new_alpha = (alpha[i] - g / q[i]).clamp(0.0, c);
                    let delta = (new_alpha - alpha[i]) * y[i];
                    alpha[i] = new_alpha;
                    for (wj, xj) in w.iter_mut().zip(xi) {
                        *wj += delta * xj;
                    }
                    wb += delta * BIAS_FEATURE;
                }
            }
            if max_violation < PG_TOL {
                break;
            }
        }
        let shift = wb * BIAS_FEATURE;
        b0 += shift;
        // The dual link wb = B * sum(alpha_i * y_i) survives the fold, so the
        // next solve starts from the shifted problem rather than stalling.
        if shift.abs() < BIAS_FOLD_TOL {
            break;
        }
    }

    let mut bias = b0 + wb * BIAS_FEATURE;
    // Exact 1-D refit of the bias: the hinge sum is piecewise linear in b,
    // so the optimum sits at a breakpoint.
    let margins: Vec<f64> = x
        .iter()
        .map(|xi| w.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let hinge = |b: f64| -> f64 {
        margins
            .iter()
            .zip(&y)
            .zip(costs)
            .map(|((dot, yi), ci)| ci * (1.0 - yi * (dot + b)).max(0.0))
            .sum()
    };
    let mut best = hinge(bias);
    for (dot, yi) in margins.iter().zip(&y) {
        let cand = 1.0 / yi - dot; // breakpoint where this sample's hinge kinks
        let val = hinge(cand);
        if val < best - 1e-12 {
            best = val;
            bias = cand;
        }
    }

    *warm_alpha = alpha;
    Ok(LinearSvmModel {
        weights: w.into_iter().map(R::of).collect(),
        bias: R::of(bias),
        c_reg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsvmConfig<R: Real> {
    /// Positive promotion threshold on the SVM margin; the negative threshold
    /// is its mirror image.
    pub th_pos: R,
    /// Hinge weight of promoted (pseudo-labeled) samples.
    pub d_reg: R,
    /// Regularization constant of the labeled hinge terms.
    pub c_reg: R,
    pub max_iters: usize,
}

impl<R: Real> Default for IsvmConfig<R> {
    fn default() -> Self {
        IsvmConfig {
            th_pos: R::of(0.8),
            d_reg: R::one(),
            c_reg: R::one(),
            max_iters: 20,
        }
    }
}

impl<R: Real> IsvmConfig<R> {
    pub fn th_neg(&self) -> R {
        -self.th_pos
    }
}

/// Promotion rule: only margins strictly beyond the thresholds enter the
/// labeled set; everything else (the whole boundary band, margin 0 included)
/// stays unlabeled.
pub fn promotion_label<R: Real>(margin: R, config: &IsvmConfig<R>) -> Option<Label> {
    if margin > config.th_pos {
        Some(Label::Positive)
    } else if margin < config.th_neg() {
        Some(Label::Negative)
    } else {
        None
    }
}

#[derive(Debug, Clone)]
pub struct IsvmOutcome<R: Real> {
    pub model: LinearSvmModel<R>,
    /// Final predicted label for every hard sample, in input order.
    pub pseudo_labels: Vec<Label>,
    pub iterations: usize,
}

/// Iterative SVM: train on the labeled set, predict the hard set, promote
/// high-|margin| hard samples into the labeled set (frozen once promoted),
/// and repeat until the full predicted label vector stabilizes.
pub fn isvm_run<R: Real>(
    labeled: &[(Vec<R>, Label)],
    hard: &[Vec<R>],
    config: &IsvmConfig<R>,
) -> Result<IsvmOutcome<R>> {
    let mut pool_alpha = vec![0.0f64; labeled.len()];
    isvm_run_warm(labeled, hard, config, &mut pool_alpha)
}

/// [`isvm_run`] with caller-held dual variables for the labeled set. The
/// prefix alphas are read as the warm start and written back after the run,
/// so successive runs over a growing labeled set re-converge cheaply.
pub fn isvm_run_warm<R: Real>(
    labeled: &[(Vec<R>, Label)],
    hard: &[Vec<R>],
    config: &IsvmConfig<R>,
    pool_alpha: &mut Vec<f64>,
) -> Result<IsvmOutcome<R>> {
    let mut promoted: Vec<Option<Label>> = vec![None; hard.len()];
    let c = config.c_reg.as_f64();
    let d = config.d_reg.as_f64();

    // The training set only ever grows (labeled prefix, then promotions in
    // promotion order), so the previous solve's dual variables stay a valid
    // warm start with zeros for the newly appended samples.
    let mut set: Vec<(Vec<R>, Label)> = labeled.to_vec();
    let mut costs = vec![c; labeled.len()];
    pool_alpha.resize(labeled.len(), 0.0);
    let mut alpha = std::mem::take(pool_alpha);

    let mut model = svm_train_warm(&set, &costs, config.c_reg, &mut alpha)?;
    if hard.is_empty() {
        *pool_alpha = alpha;
        return Ok(IsvmOutcome {
            model,
            pseudo_labels: Vec::new(),
            iterations: 0,
        });
    }

    let mut prev: Option<Vec<Label>> = None;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let margins: Vec<R> = hard
            .iter()
            .map(|x| model.margin(x))
            .collect::<Result<_>>()?;
        let labels: Vec<Label> = margins
            .iter()
            .map(|&m| {
                if m > R::zero() {
                    Label::Positive
                } else {
                    Label::Negative
                }
            })
            .collect();
        for (j, &m) in margins.iter().enumerate() {
            if promoted[j].is_none() {
                if let Some(label) = promotion_label(m, config) {
                    promoted[j] = Some(label);
                    set.push((hard[j].clone(), label));
                    costs.push(d);
                    alpha.push(0.0);
                }
            }
        }
        let stable = prev.as_deref() == Some(&labels);
        if stable || iterations >= config.max_iters {
            alpha.truncate(labeled.len());
            *pool_alpha = alpha;
            return Ok(IsvmOutcome {
                model,
                pseudo_labels: labels,
                iterations,
            });
        }
        prev = Some(labels);
        model = svm_train_warm(&set, &costs, config.c_reg, &mut alpha)?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn l(v: &[f64], label: Label) -> (Vec<f64>, Label) {
        (v.to_vec(), label)
    }

    #[test]
    fn analytic_max_margin_1d() {
        // x = -1 negative, x = +1 positive, large c: boundary at 0, w = 1.
        let samples = vec![l(&[-1.0], Label::Negative), l(&[1.0], Label::Positive)];
        let model = svm_train(&samples, 100.0).unwrap();
        assert!((model.weights[0] - 1.0).abs() < 1e-3, "w = {:?}", model.weights);
        assert!(model.bias.abs() < 1e-3, "b = {}", model.bias);
        assert_eq!(model.predict(&[1.0]).unwrap(), Label::Positive);
        assert_eq!(model.predict(&[-1.0]).unwrap(), Label::Negative);
    }

    #[test]
    fn duplicated_set_same_decision_function() {
        let samples = vec![
            l(&[0.0, 1.0], Label::Positive),
            l(&[1.0, 2.0], Label::Positive),
            l(&[3.0, 0.0], Label::Negative),
            l(&[4.0, 1.0], Label::Negative),
        ];
        let doubled: Vec<_> = samples.iter().chain(&samples).cloned().collect();
        let a = svm_train(&samples, 1.0).unwrap();
        let b = svm_train(&doubled, 0.5).unwrap();
        // Same optimization problem: objective values match on each solution.
        let costs_a = vec![1.0; samples.len()];
        let costs_b = vec![0.5; doubled.len()];
        let oa = primal_objective(&a.weights, a.bias, &samples, &costs_a);
        let ob = primal_objective(&b.weights, b.bias, &doubled, &costs_b);
        assert!((oa - ob).abs() < 1e-3 * oa.max(1.0), "{oa} vs {ob}");
        // Points clearly off the decision boundary classify identically.
        for x in [[0.0, 3.0], [5.0, 0.0]] {
            assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
        }
    }

    fn blobs(n_per: usize, seed: u64) -> Vec<(Vec<f64>, Label)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for _ in 0..n_per {
            out.push((
                vec![rng.gen_range(-1.0..1.0) + 3.0, rng.gen_range(-1.0..1.0) + 3.0],
                Label::Positive,
            ));
            out.push((
                vec![rng.gen_range(-1.0..1.0) - 3.0, rng.gen_range(-1.0..1.0) - 3.0],
                Label::Negative,
            ));
        }
        out
    }

    #[test]
    fn separable_blobs_perfect_training_accuracy() {
        let samples = blobs(50, 17);
        let model = svm_train(&samples, 1.0).unwrap();
        for (x, label) in &samples {
            assert_eq!(model.predict(x).unwrap(), *label);
        }
    }

    #[test]
    fn single_class_rejected() {
        let samples = vec![l(&[1.0], Label::Positive), l(&[2.0], Label::Positive)];
        assert!(matches!(svm_train(&samples, 1.0), Err(Error::SingleClass)));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let samples = vec![
            l(&[1.0, 2.0], Label::Positive),
            l(&[1.0], Label::Negative),
        ];
        assert!(matches!(
            svm_train(&samples, 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn score_zero_weights_returns_bias() {
        let model = LinearSvmModel {
            weights: vec![0.0, 0.0, 0.0],
            bias: 0.7,
            c_reg: 1.0,
        };
        assert_eq!(svm_score(&model, &[9.0, -2.0, 4.0]).unwrap(), 0.7);
    }

    #[test]
    fn score_antisymmetric_under_negation() {
        let model = LinearSvmModel {
            weights: vec![1.5, -0.5],
            bias: 0.25,
            c_reg: 1.0,
        };
        let neg = LinearSvmModel {
            weights: vec![-1.5, 0.5],
            bias: -0.25,
            c_reg: 1.0,
        };
        let x = [2.0, 3.0];
        assert_eq!(
            svm_score(&model, &x).unwrap(),
            -svm_score(&neg, &x).unwrap()
        );
    }

    #[test]
    fn aligned_unit_weight_gives_norm_plus_bias() {
        let x = vec![3.0, 4.0];
        let norm = 5.0f64;
        let model = LinearSvmModel {
            weights: x.iter().map(|v| v / norm).collect(),
            bias: 0.1,
            c_reg: 1.0,
        };
        assert!((svm_score(&model, &x).unwrap() - (norm + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn isvm_empty_hard_set() {
        let labeled = blobs(20, 3);
        let out = isvm_run(&labeled, &[], &IsvmConfig::default()).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.pseudo_labels.is_empty());
    }

    #[test]
    fn isvm_copy_of_labeled_reaches_fixpoint_fast() {
        let labeled = blobs(30, 5);
        let hard: Vec<Vec<f64>> = labeled.iter().map(|(x, _)| x.clone()).collect();
        let truth: Vec<Label> = labeled.iter().map(|(_, l)| *l).collect();
        let out = isvm_run(&labeled, &hard, &IsvmConfig::default()).unwrap();
        assert!(out.iterations <= 2, "iterations = {}", out.iterations);
        assert_eq!(out.pseudo_labels, truth);
    }

    #[test]
    fn boundary_sample_labeled_negative_never_promoted() {
        // Exact margin 0: labeled negative by the sign convention, never
        // promoted by the strict thresholds.
        let cfg = IsvmConfig::<f64>::default();
        assert_eq!(promotion_label(0.0, &cfg), None);
        assert_eq!(promotion_label(cfg.th_pos, &cfg), None);
        assert_eq!(promotion_label(cfg.th_neg(), &cfg), None);
        assert_eq!(
            promotion_label(cfg.th_pos + 1e-9, &cfg),
            Some(Label::Positive)
        );
        assert_eq!(
            promotion_label(cfg.th_neg() - 1e-9, &cfg),
            Some(Label::Negative)
        );
        let model = LinearSvmModel {
            weights: vec![1.0, 0.0],
            bias: 0.0,
            c_reg: 1.0,
        };
        assert_eq!(model.margin(&[0.0, 5.0]).unwrap(), 0.0);
        assert_eq!(model.predict(&[0.0, 5.0]).unwrap(), Label::Negative);
    }

    #[test]
    fn isvm_labels_are_fixpoint_of_returned_model() {
        let labeled = blobs(25, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let hard: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)])
            .collect();
        let out = isvm_run(&labeled, &hard, &IsvmConfig::default()).unwrap();
        for (x, want) in hard.iter().zip(&out.pseudo_labels) {
            assert_eq!(out.model.predict(x).unwrap(), *want);
        }
    }
}
