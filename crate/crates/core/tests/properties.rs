//! Randomized property tests over the arithmetic core.

use proptest::prelude::*;

use scenedet::eval::iou;
use scenedet::fern::{fern_code, Fern, FernPosterior, LbfPair};
use scenedet::gdm::{partition_response, update_theta, DualBoundary, Region};
use scenedet::hog::{compute_hog, HogParams};
use scenedet::imaging::{BoundingBox, Label, Patch};

fn arb_box() -> impl Strategy<Value = BoundingBox> {
    (-50i32..50, -50i32..50, 1u32..60, 1u32..60)
        .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, w, h))
}

proptest! {
    #[test]
    fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let ab = iou(&a, &b);
        let ba = iou(&b, &a);
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn iou_self_is_one(a in arb_box()) {
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn partition_is_total_and_consistent(
        score in -1.0f64..2.0,
        beta in 0.01f64..0.99,
        theta in 0.0f64..=1.0,
    ) {
        let boundary = DualBoundary { beta, theta };
        let region = partition_response(score, &boundary);
        match region {
            Region::Positive => prop_assert!(score > boundary.b_plus()),
            Region::Negative => prop_assert!(score < boundary.b_minus()),
            Region::Hard => prop_assert!(
                score >= boundary.b_minus() && score <= boundary.b_plus()
            ),
        }
    }

    #[test]
    fn theta_update_monotone_and_clamped(
        theta_prev in 0.0f64..=1.0,
        zeta in -1.0f64..=1.0,
        nu in 0.01f64..=1.0,
    ) {
        let theta = update_theta(theta_prev, zeta, nu);
        prop_assert!(theta <= theta_prev);
        prop_assert!(theta >= 0.0);
    }

    #[test]
    fn fern_code_in_range(pixels in proptest::collection::vec(any::<u8>(), 1024)) {
        let patch = Patch::new(32, pixels);
        let fern = Fern {
            pairs: (0..6)
                .map(|j| LbfPair {
                    a: (j as u32 * 5 % 32, j as u32 * 7 % 32),
                    b: (j as u32 * 11 % 32, j as u32 * 13 % 32),
                })
                .collect(),
        };
        let code = fern_code(&patch, &fern);
        prop_assert!(code < 64);
    }

    #[test]
    fn posterior_confidence_in_open_unit_interval(
        updates in proptest::collection::vec((0usize..16, any::<bool>()), 0..200),
    ) {
        let mut posterior: FernPosterior<f64> = FernPosterior::new(16, 0.01);
        for (code, pos) in updates {
            let label = if pos { Label::Positive } else { Label::Negative };
            posterior.update(code, label).unwrap();
        }
        for code in 0..16 {
            let h = posterior.weak_confidence(code);
            prop_assert!(h > 0.0 && h < 1.0, "h = {h}");
        }
    }

    #[test]
    fn hog_block_norms_bounded(pixels in proptest::collection::vec(any::<u8>(), 4096)) {
        let params: HogParams<f64> = HogParams::default();
        let desc = compute_hog(&Patch::new(64, pixels), &params).unwrap();
        prop_assert_eq!(desc.len(), 324);
        let block_len = (params.block * params.block) as usize * params.bins;
        for chunk in desc.chunks(block_len) {
            let norm: f64 = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(norm <= 1.0 + 1e-6);
        }
    }
}
