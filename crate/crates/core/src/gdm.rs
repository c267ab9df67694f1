//! The hybrid generative-discriminative model: dual-boundary partition,
//! margin adaptation and the online gradual optimization loop.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::detect::{build_scale_set, par_scan_filtered, ScaleSet};
use crate::error::{Error, Result};
use crate::eval::iou;
use crate::fern::OsfClassifier;
use crate::hog::{compute_hog, HogParams};
use crate::imaging::{
    extract_patch, generate_initial_samples, BoundingBox, Frame, Label, Patch, Sample,
    FERN_PATCH_SIDE, HOG_PATCH_SIDE,
};
use crate::num::Real;
use crate::svm::{isvm_run_warm, promotion_label, svm_train, LinearSvmModel};

/// Score-space region assigned by the dual boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    Positive,
    Hard,
    Negative,
}

/// Positive/negative boundaries `beta +- theta/2` around the decision
/// hyperplane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualBoundary<R: Real> {
    pub beta: R,
    pub theta: R,
}

impl<R: Real> DualBoundary<R> {
    pub fn b_plus(&self) -> R {
        self.beta + self.theta / R::of(2.0)
    }

    pub fn b_minus(&self) -> R {
        self.beta - self.theta / R::of(2.0)
    }
}

/// Assign a fern score to a region. Boundary equality goes to Hard so
/// ambiguity is routed to the discriminative model.
pub fn partition_response<R: Real>(score: R, boundary: &DualBoundary<R>) -> Region {
    if score > boundary.b_plus() {
        Region::Positive
    } else if score < boundary.b_minus() {
        Region::Negative
    } else {
        Region::Hard
    }
}

/// One hard detection response held for the next retrain.
#[derive(Debug, Clone)]
pub struct HardEntry<R: Real> {
    pub fern_patch: Patch,
    pub hog_patch: Patch,
    pub fern_score: R,
    pub frame_index: usize,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, Default)]
pub struct HardSampleBuffer<R: Real> {
    pub entries: Vec<HardEntry<R>>,
}

impl<R: Real> HardSampleBuffer<R> {
    pub fn new() -> Self {
        HardSampleBuffer {
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Agreement between fern score offsets and SVM signs over hard samples:
/// `zeta = sum[(s - beta) * sign(m)] / sum|s - beta|`, 0 when every score
/// sits exactly at beta.
pub fn compute_zeta<R: Real>(
    hard: &HardSampleBuffer<R>,
    svm_margins: &[R],
    beta: R,
) -> Result<R> {
    if hard.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    if svm_margins.len() != hard.len() {
        return Err(Error::MisalignedMargins {
            zeta: 0,
            margins: svm_margins.len(),
            entries: hard.len(),
        });
    }
    let scores: Vec<R> = hard.entries.iter().map(|e| e.fern_score).collect();
    Ok(zeta_from_parts(&scores, svm_margins, beta))
}

pub(crate) fn zeta_from_parts<R: Real>(fern_scores: &[R], svm_margins: &[R], beta: R) -> R {
    let mut num = R::zero();
    let mut den = R::zero();
    for (&s, &m) in fern_scores.iter().zip(svm_margins) {
        let sign = if m > R::zero() { R::one() } else { -R::one() };
        num = num + (s - beta) * sign;
        den = den + (s - beta).abs();
    }
    if den == R::zero() {
        R::zero()
    } else {
        num / den
    }
}

/// Margin update `raw = 1 - nu * zeta`, clamped to stay in [0, theta_prev]
/// so the margin shrinks monotonically.
pub fn update_theta<R: Real>(theta_prev: R, zeta: R, nu: R) -> R {
    let raw = R::one() - nu * zeta;
    theta_prev.min(raw.max(R::zero()))
}

/// The deployable hybrid model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdmModel<R: Real> {
    pub osf: OsfClassifier<R>,
    pub svm: LinearSvmModel<R>,
    pub boundary: DualBoundary<R>,
    pub hog_params: HogParams<R>,
}

/// Outcome of a single hybrid classification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridOutcome<R: Real> {
    pub label: Label,
    pub fern_score: R,
    pub region: Region,
    pub svm_margin: Option<R>,
    pub svm_used: bool,
}

impl<R: Real> GdmModel<R> {
    /// Classify a patch pair: Positive/Negative regions decide without the
    /// SVM; the Hard band defers to the SVM margin sign.
    pub fn hybrid_classify(&self, fern_patch: &Patch, hog_patch: &Patch) -> Result<HybridOutcome<R>> {
        self.hybrid_classify_with(fern_patch, || Ok(hog_patch.clone()))
    }

    /// Same as [`hybrid_classify`](Self::hybrid_classify) but the HOG patch
    /// is only materialized when the Hard branch needs it.
    pub fn hybrid_classify_with(
        &self,
        fern_patch: &Patch,
        hog_patch: impl FnOnce() -> Result<Patch>,
    ) -> Result<HybridOutcome<R>> {
        fern_patch.expect_side(FERN_PATCH_SIDE)?;
        let fern_score = self.osf.score(fern_patch);
        let region = partition_response(fern_score, &self.boundary);
        let (label, svm_margin, svm_used) = match region {
            Region::Positive => (Label::Positive, None, false),
            Region::Negative => (Label::Negative, None, false),
            Region::Hard => {
                let patch = hog_patch()?;
                patch.expect_side(HOG_PATCH_SIDE)?;
                let desc = compute_hog(&patch, &self.hog_params)?;
                let margin = self.svm.margin(&desc)?;
                let label = if margin > R::zero() {
                    Label::Positive
                } else {
                    Label::Negative
                };
                (label, Some(margin), true)
            }
        };
        Ok(HybridOutcome {
            label,
            fern_score,
            region,
            svm_margin,
            svm_used,
        })
    }
}

/// Learner state carried across iterations and checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerState<R: Real> {
    /// Completed retrain iterations t.
    pub iteration: usize,
    pub theta_history: Vec<R>,
    pub zeta_last: Option<R>,
    /// (positive, negative) pseudo-labeled samples learned so far.
    pub samples_learned: (usize, usize),
    pub converged: bool,
    /// Frames fully processed by the learner (frame 0 is init-only).
    pub frames_processed: usize,
}

impl<R: Real> LearnerState<R> {
    pub fn fresh() -> Self {
        LearnerState {
            iteration: 0,
            theta_history: Vec::new(),
            zeta_last: None,
            samples_learned: (0, 0),
            converged: false,
            frames_processed: 0,
        }
    }
}

/// One progress-log row per retrain iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProgressRow {
    pub t: usize,
    pub theta: f64,
    pub zeta: f64,
    pub n_hard: usize,
    pub n_pos_pseudo: usize,
    pub n_neg_pseudo: usize,
}

/// Initial-model training: build the seed-warp sample set, train the OSF and
/// the initial SVM on it, open the boundary at theta_0.
pub fn init_model<R: Real>(
    cfg: &RunConfig,
    frame0: &Frame,
    seeds: &[BoundingBox],
) -> Result<GdmModel<R>> {
    if seeds.is_empty() {
        return Err(Error::NoSeeds);
    }
    let samples = generate_initial_samples(frame0, seeds, cfg.warps_per_seed, cfg.rng_seed)?;
    let mut osf = OsfClassifier::new(
        cfg.n_selectors,
        cfg.m_candidates,
        cfg.fern_bits,
        R::of(cfg.epsilon),
        R::of(cfg.th_fern),
        cfg.rng_seed,
    )?;
    osf.train_online(samples.iter().map(|s| (&s.fern_patch, s.label)))?;
    let hog_params = cfg.hog_params::<R>();
    let descriptors = hog_label_set(&samples, &hog_params)?;
    let svm = svm_train(&descriptors, R::of(cfg.c_reg))?;
    Ok(GdmModel {
        osf,
        svm,
        boundary: DualBoundary {
            beta: R::of(cfg.beta),
            theta: R::of(cfg.theta0),
        },
        hog_params,
    })
}

fn hog_label_set<R: Real>(
    samples: &[Sample],
    params: &HogParams<R>,
) -> Result<Vec<(Vec<R>, Label)>> {
    samples
        .iter()
        .map(|s| Ok((compute_hog(&s.hog_patch, params)?, s.label)))
        .collect()
}

/// The online gradual optimization loop over a frame stream. Streams the
/// frames with the OSF detector, buffers Hard responses, and on every
/// `hard_batch` overflow runs the iterative SVM, retrains the OSF on the
/// pseudo-labeled hard set, and shrinks the margin. Exits when theta drops
/// to `theta_stop` or the stream ends (flagged non-converged).
pub struct Learner<R: Real> {
    pub model: GdmModel<R>,
    pub state: LearnerState<R>,
    pub buffer: HardSampleBuffer<R>,
    pub progress: Vec<ProgressRow>,
    cfg: RunConfig,
    scales: ScaleSet,
    /// Labeled pool the iterative SVM trains from: the initial warp set plus
    /// every hard sample promoted at high confidence since, so the
    /// discriminative model keeps what it has mined.
    labeled_pool: Vec<(Vec<R>, Label)>,
    /// Dual variables of the last SVM solve, aligned with `labeled_pool`;
    /// warm-starts the next retrain.
    pool_alpha: Vec<f64>,
    /// Initial warp-set size; promoted samples beyond `POOL_GROWTH * this`
    /// evict the oldest promotion so retrain cost stays bounded.
    pool_floor: usize,
}

/// Promoted samples may grow the labeled pool to this multiple of the
/// initial warp set before the oldest promotions start rotating out.
const POOL_GROWTH: usize = 4;

impl<R: Real> Learner<R> {
    /// Start (or resume) a learner. `frame0` and `seeds` regenerate the
    /// deterministic initial labeled set the iterative SVM keeps using.
    pub fn new(
        cfg: RunConfig,
        model: GdmModel<R>,
        state: LearnerState<R>,
        frame0: &Frame,
        seeds: &[BoundingBox],
    ) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::NoSeeds);
        }
        let samples = generate_initial_samples(frame0, seeds, cfg.warps_per_seed, cfg.rng_seed)?;
        let labeled_pool = hog_label_set(&samples, &model.hog_params)?;
        let pool_alpha = vec![0.0; labeled_pool.len()];
        let pool_floor = labeled_pool.len();
        let scales = build_scale_set(&seeds[0], cfg.n_scales, cfg.scale_ratio)?;
        Ok(Learner {
            model,
            state,
            buffer: HardSampleBuffer::new(),
            progress: Vec::new(),
            cfg,
            scales,
            labeled_pool,
            pool_alpha,
            pool_floor,
        })
    }

    pub fn converged(&self) -> bool {
        self.state.converged
    }

    pub fn scales(&self) -> &ScaleSet {
        &self.scales
    }

    /// Scan one frame, retraining whenever the buffer overflows. Returns
    /// true while the learner wants more frames.
    pub fn process_frame(&mut self, frame: &Frame) -> Result<bool> {
        if self.state.converged {
            return Ok(false);
        }
        let boundary = self.model.boundary;
        let mut hard_boxes: Vec<(BoundingBox, R)> = par_scan_filtered(
            &self.model.osf,
            frame,
            &self.scales,
            self.cfg.stride_frac,
            |score| {
                partition_response(score, &boundary) == Region::Hard && score > boundary.beta
            },
        );
        // Buffer only the upper half of the band: responses the generative
        // model leans positive on. Those are the windows a shrinking margin
        // would promote to detections, so they are the ones worth resolving.
        // Sub-beta responses the ferns already reject; padding batches with
        // them would flood the agreement statistic with easy negatives and
        // close the margin while real offenders are still being suppressed.
        // Collection is capped at a quarter batch per frame so that every
        // batch spans several frames: the margin update schedule is fixed
        // per retrain, and retraining on every frame would converge while
        // the moving objects have covered only a few pixels of travel,
        // leaving object/background juxtapositions elsewhere in the scene
        // unmined. Taking the top responses per frame still drains the
        // worst offenders first.
        // Overlap suppression keeps one window per local peak: without it
        // every true object floods the batch with its own off-center crops,
        // which score high on the ferns but are rightly rejected by the SVM,
        // and that disagreement renews itself every frame no matter how good
        // the model gets. The threshold is looser than detection NMS so that
        // partially-overlapping echoes of an object (corner windows at IoU
        // just above the detection cutoff) still get mined and resolved
        // instead of hiding under the object's peak forever.
        const MINING_SUPPRESS_IOU: f64 = 0.6;
        hard_boxes.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        let per_frame_cap = (self.cfg.hard_batch / 2).max(1);
        let mut peaks: Vec<(BoundingBox, R)> = Vec::new();
        for (bbox, score) in hard_boxes {
            if peaks.len() >= per_frame_cap {
                break;
            }
            if peaks.iter().all(|(kept, _)| iou(kept, &bbox) <= MINING_SUPPRESS_IOU) {
                peaks.push((bbox, score));
            }
        }
        for (bbox, score) in peaks {
            self.collect_hard(frame, bbox, score)?;
            if self.buffer.len() > self.cfg.hard_batch {
                self.retrain()?;
                if self.state.converged {
                    return Ok(false);
                }
            }
        }
        self.state.frames_processed += 1;
        Ok(true)
    }

    fn collect_hard(&mut self, frame: &Frame, bbox: BoundingBox, score: R) -> Result<()> {
        self.buffer.entries.push(HardEntry {
            fern_patch: extract_patch(frame, &bbox, FERN_PATCH_SIDE)?,
            hog_patch: extract_patch(frame, &bbox, HOG_PATCH_SIDE)?,
            fern_score: score,
            frame_index: frame.index,
            bbox,
        });
        Ok(())
    }

    /// One Table-style iteration: ISVM over (L0, hard set), OSF retrain on
    /// the pseudo-labeled hard set only, margin update, buffer clear.
    fn retrain(&mut self) -> Result<()> {
        let n_hard = self.buffer.len();
        if n_hard == 0 {
            return Ok(());
        }
        let hard_descs: Vec<Vec<R>> = self
            .buffer
            .entries
            .iter()
            .map(|e| compute_hog(&e.hog_patch, &self.model.hog_params))
            .collect::<Result<_>>()?;
        let isvm_cfg = self.cfg.isvm_config::<R>();
        let isvm = isvm_run_warm(&self.labeled_pool, &hard_descs, &isvm_cfg, &mut self.pool_alpha)?;
        self.model.svm = isvm.model;

        // High-confidence pseudo-labels join the labeled pool for good, so
        // later retrains keep the background the model has already mined.
        // Fresh entries start with a zero dual variable, which keeps the
        // carried warm start exact.
        for desc in &hard_descs {
            let margin = self.model.svm.margin(desc)?;
            if let Some(label) = promotion_label(margin, &isvm_cfg) {
                if self.labeled_pool.len() >= self.pool_floor * POOL_GROWTH {
                    self.labeled_pool.remove(self.pool_floor);
                    self.pool_alpha.remove(self.pool_floor);
                }
                self.labeled_pool.push((desc.clone(), label));
                self.pool_alpha.push(0.0);
            }
        }

        // OSF retrains on the pseudo-labeled hard samples only.
        self.model.osf.train_online(
            self.buffer
                .entries
                .iter()
                .zip(&isvm.pseudo_labels)
                .map(|(e, &l)| (&e.fern_patch, l)),
        )?;

        // The freshly retrained fern re-classifies the batch; agreement of
        // those scores with the SVM signs is what drives the margin update,
        // so the margin only shrinks once the generative model has actually
        // absorbed what the discriminative model labeled.
        for e in &mut self.buffer.entries {
            e.fern_score = self.model.osf.score(&e.fern_patch);
        }
        let margins: Vec<R> = hard_descs
            .iter()
            .map(|d| self.model.svm.margin(d))
            .collect::<Result<_>>()?;
        let zeta = compute_zeta(&self.buffer, &margins, self.model.boundary.beta)?;
        let theta = update_theta(self.model.boundary.theta, zeta, R::of(self.cfg.nu));
        self.model.boundary.theta = theta;

        let n_pos = isvm
            .pseudo_labels
            .iter()
            .filter(|&&l| l == Label::Positive)
            .count();
        let n_neg = n_hard - n_pos;
        self.state.iteration += 1;
        self.state.theta_history.push(theta);
        self.state.zeta_last = Some(zeta);
        self.state.samples_learned.0 += n_pos;
        self.state.samples_learned.1 += n_neg;
        self.progress.push(ProgressRow {
            t: self.state.iteration,
            theta: theta.as_f64(),
            zeta: zeta.as_f64(),
            n_hard,
            n_pos_pseudo: n_pos,
            n_neg_pseudo: n_neg,
        });
        self.buffer.entries.clear();
        if theta <= R::of(self.cfg.theta_stop) {
            self.state.converged = true;
        }
        Ok(())
    }
}

/// Drive a [`Learner`] over a full frame stream. `frames` yields the stream
/// frames in order, excluding frame 0 (which only seeds the initial set).
pub fn run_learner<R: Real, I>(
    cfg: &RunConfig,
    frame0: &Frame,
    frames: I,
    seeds: &[BoundingBox],
) -> Result<(GdmModel<R>, LearnerState<R>, Vec<ProgressRow>)>
where
    I: IntoIterator<Item = Result<Frame>>,
{
    let model = init_model(cfg, frame0, seeds)?;
    let mut learner = Learner::new(cfg.clone(), model, LearnerState::fresh(), frame0, seeds)?;
    let mut any = false;
    for frame in frames {
        any = true;
        if !learner.process_frame(&frame?)? {
            break;
        }
    }
    if !any {
        return Err(Error::EmptyStream);
    }
    let Learner {
        model,
        state,
        progress,
        ..
    } = learner;
    Ok((model, state, progress))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boundary(beta: f64, theta: f64) -> DualBoundary<f64> {
        DualBoundary { beta, theta }
    }

    #[test]
    fn initial_wide_margin_routes_all_to_hard() {
        let b = boundary(0.5, 1.0);
        assert_eq!(partition_response(0.9, &b), Region::Hard);
        assert_eq!(partition_response(0.1, &b), Region::Hard);
        assert_eq!(partition_response(0.5, &b), Region::Hard);
    }

    #[test]
    fn narrow_margin_partitions() {
        let b = boundary(0.5, 0.3);
        assert_eq!(partition_response(0.9, &b), Region::Positive);
        assert_eq!(partition_response(0.1, &b), Region::Negative);
        assert_eq!(partition_response(0.5, &b), Region::Hard);
    }

    #[test]
    fn boundary_equality_is_hard() {
        let b = boundary(0.5, 0.2);
        assert_eq!(partition_response(b.b_plus(), &b), Region::Hard);
        assert_eq!(partition_response(b.b_minus(), &b), Region::Hard);
    }

    fn buf_with_scores(scores: &[f64]) -> HardSampleBuffer<f64> {
        HardSampleBuffer {
            entries: scores
                .iter()
                .map(|&s| HardEntry {
                    fern_patch: Patch::new(32, vec![0; 1024]),
                    hog_patch: Patch::new(64, vec![0; 4096]),
                    fern_score: s,
                    frame_index: 0,
                    bbox: BoundingBox::new(0, 0, 10, 10),
                })
                .collect(),
        }
    }

    #[test]
    fn zeta_full_agreement() {
        let buf = buf_with_scores(&[0.7, 0.3]);
        let z = compute_zeta(&buf, &[1.0, -1.0], 0.5).unwrap();
        assert!((z - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zeta_full_disagreement() {
        let buf = buf_with_scores(&[0.7, 0.3]);
        let z = compute_zeta(&buf, &[-1.0, 1.0], 0.5).unwrap();
        assert!((z + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zeta_degenerate_scores() {
        let buf = buf_with_scores(&[0.5, 0.5]);
        let z = compute_zeta(&buf, &[1.0, -2.0], 0.5).unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn zeta_empty_buffer_errors() {
        let buf = buf_with_scores(&[]);
        assert!(matches!(
            compute_zeta(&buf, &[], 0.5),
            Err(Error::EmptyBuffer)
        ));
    }

    #[test]
    fn theta_identity_when_zeta_zero() {
        assert_eq!(update_theta(0.8, 0.0, 0.85), 0.8);
    }

    #[test]
    fn theta_shrinks_with_full_agreement() {
        let t: f64 = update_theta(1.0, 1.0, 0.85);
        assert!((t - 0.15).abs() < 1e-12);
    }

    #[test]
    fn theta_clamped_when_zeta_negative() {
        let t = update_theta(0.6, -0.5, 0.85);
        assert_eq!(t, 0.6);
    }
}
