//! End-to-end flows across module boundaries: synthetic data through the
//! tracker into the evaluator, cross-view recovery over augmented views,
//! proposal assignment over sampled boxes, and text round-trips.

use sinktrack::agreement::{recover_proposals, AugmentedView, RecoveryConfig};
use sinktrack::assignment::{auxiliary_loss, marginals_one_to_many, select_soft_labels};
use sinktrack::geometry::{giou, iou};
use sinktrack::metrics::{evaluate, TrackedBox};
use sinktrack::mot_io;
use sinktrack::synth::{
    dual_views, generate, sample_proposals, DualViewConfig, MotionModel, ProposalConfig,
    SynthConfig, SyntheticSequence,
};
use sinktrack::tracker::{AssociationMode, Tracker, TrackerConfig};
use sinktrack::transport::{sinkhorn_solve, CostMatrix, SinkhornConfig, Stabilization};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Runs a tracker over a generated sequence, emitting per-frame boxes for
/// every track that is active (matched or spawned) in that frame.
fn run_tracker(seq: &SyntheticSequence, config: TrackerConfig) -> Vec<Vec<TrackedBox>> {
    let mut tracker = Tracker::new(config).unwrap();
    seq.detections
        .iter()
        .zip(&seq.embeddings)
        .map(|(dets, embs)| {
            tracker.step(dets, Some(embs)).unwrap();
            tracker
                .active_tracks()
                .map(|t| TrackedBox {
                    id: t.id(),
                    bbox: t.bbox(),
                    score: t.last_score(),
                })
                .collect()
        })
        .collect()
}

fn tracker_config(mode: AssociationMode, match_threshold: f64) -> TrackerConfig {
    TrackerConfig {
        association: mode,
        match_threshold,
        ..TrackerConfig::default()
    }
}

#[test]
fn clean_sequences_track_perfectly_in_every_mode_and_motion() {
    for motion in [
        MotionModel::Linear,
        MotionModel::Crossing,
        MotionModel::Sinusoidal,
    ] {
        let seq = generate(&SynthConfig {
            n_objects: 8,
            n_frames: 60,
            motion,
            embed_dim: 16,
            ..SynthConfig::default()
        })
        .unwrap();
        // A perfect bisoftmax match among 8 candidates scores e/(e+7),
        // hence the lower threshold for that mode.
        for (mode, threshold) in [
            (AssociationMode::Bisoftmax, 0.15),
            (AssociationMode::OtSinkhorn, 0.5),
            (AssociationMode::IouGreedy, 0.5),
        ] {
            let results = run_tracker(&seq, tracker_config(mode, threshold));
            let scores = evaluate(&seq.ground_truth, &results, 0.5).unwrap();
            assert_eq!(
                scores.id_switches, 0,
                "{motion}/{mode}: unexpected switches"
            );
            assert_eq!(scores.mota, 1.0, "{motion}/{mode}: mota {}", scores.mota);
            assert_eq!(scores.idf1, 1.0, "{motion}/{mode}: idf1 {}", scores.idf1);
            assert_eq!(scores.mostly_tracked, 8);
        }
    }
}

#[test]
fn appearance_survives_crossings_that_break_geometry() {
    // Crossing paths with positional noise: the exact-coincidence frames
    // make the opposing box the better geometric continuation, so
    // overlap-greedy association swaps identities while the (orthogonal)
    // appearance anchors keep both appearance modes clean.
    let seq = generate(&SynthConfig {
        n_objects: 10,
        n_frames: 100,
        motion: MotionModel::Crossing,
        loc_noise_sigma: 2.5,
        embed_dim: 16,
        embed_noise_sigma: 0.05,
        seed: 5,
        ..SynthConfig::default()
    })
    .unwrap();

    let iou_scores = evaluate(
        &seq.ground_truth,
        &run_tracker(&seq, tracker_config(AssociationMode::IouGreedy, 0.5)),
        0.5,
    )
    .unwrap();
    assert!(
        iou_scores.id_switches >= 1,
        "geometry-only tracking should swap at least once, got {}",
        iou_scores.id_switches
    );

    for (mode, threshold) in [
        (AssociationMode::Bisoftmax, 0.1),
        (AssociationMode::OtSinkhorn, 0.5),
    ] {
        let scores = evaluate(
            &seq.ground_truth,
            &run_tracker(&seq, tracker_config(mode, threshold)),
            0.5,
        )
        .unwrap();
        assert_eq!(scores.id_switches, 0, "{mode}: switched identities");
        assert!(
            scores.idf1 > iou_scores.idf1,
            "{mode}: idf1 {} not above geometric {}",
            scores.idf1,
            iou_scores.idf1
        );
    }
}

#[test]
fn cross_view_recovery_finds_every_object_through_an_affine_view() {
    let seq = generate(&SynthConfig {
        n_objects: 6,
        n_frames: 5,
        embed_dim: 8,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let views = dual_views(
        &seq.detections[2],
        &DualViewConfig {
            jitter_sigma: 0.5,
            score_sigma: 0.02,
            affine_view_b: true,
        },
        &mut rng,
    )
    .unwrap();

    let view_a = AugmentedView::original(views.view_a);
    let view_b = AugmentedView::augmented(views.view_b, views.inverse_b);
    let recovered =
        recover_proposals(&view_a, &view_b, &RecoveryConfig::default()).unwrap();

    assert_eq!(recovered.len(), 6);
    for det in &recovered {
        let best = seq.ground_truth[2]
            .iter()
            .map(|g| iou(det.bbox(), g.bbox))
            .fold(0.0f64, f64::max);
        assert!(best > 0.8, "recovered box far from any object: {best}");
    }
}

#[test]
fn sampled_proposals_resolve_to_their_owners_through_transport() {
    let seq = generate(&SynthConfig {
        n_objects: 5,
        n_frames: 3,
        embed_dim: 8,
        ..SynthConfig::default()
    })
    .unwrap();
    let gt = &seq.ground_truth[0];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let sampled = sample_proposals(
        gt,
        &ProposalConfig {
            positives_per_object: 2,
            negatives: 6,
            positive_min_iou: 0.5,
            jitter_sigma: 1.0,
        },
        &mut rng,
    )
    .unwrap();

    // Geometry-based assignment cost: high overlap means low cost.
    let columns = sampled.columns();
    let cost = Array2::from_shape_fn((gt.len(), columns.len()), |(i, j)| {
        (1.0 - giou(gt[i].bbox, columns[j])) / 2.0
    });
    let marginals = marginals_one_to_many(gt.len(), &sampled).unwrap();
    let plan = sinkhorn_solve(
        &CostMatrix::new(cost).unwrap(),
        &marginals,
        &SinkhornConfig {
            reg: 0.01,
            max_iterations: 2000,
            convergence_tol: 1e-9,
            stabilization: Stabilization::Auto,
        },
    )
    .unwrap();

    // The plan is feasible and concentrates each object's mass on its own
    // jittered copies.
    assert!(plan.marginal_violation(&marginals).unwrap() < 1e-6);
    let labels =
        select_soft_labels(&plan, &sinktrack::transport::SlackInfo::none()).unwrap();
    for label in &labels {
        let owner = sampled.positives[label.positive_col].1;
        assert_eq!(
            owner, label.row,
            "row {} pulled a proposal owned by {}",
            label.row, owner
        );
    }
    // Against the ideal one-hot targets the transported mass is nearly
    // perfectly placed.
    let loss = auxiliary_loss(&plan, &sampled).unwrap();
    assert!(loss < 0.05, "auxiliary loss {loss} too high");
}

#[test]
fn text_formats_survive_a_full_write_parse_cycle() {
    let seq = generate(&SynthConfig {
        n_objects: 4,
        n_frames: 12,
        fn_rate: 0.2,
        fp_rate: 0.2,
        loc_noise_sigma: 1.5,
        embed_dim: 6,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();

    // Box records: formatting is idempotent through a parse cycle.
    let gt_text = mot_io::format_mot(&mot_io::ground_truth_to_rows(&seq.ground_truth));
    let reparsed = mot_io::parse_mot(&gt_text).unwrap();
    assert_eq!(mot_io::format_mot(&reparsed), gt_text);
    let gt_back = mot_io::rows_to_ground_truth(&reparsed).unwrap();
    assert_eq!(gt_back.len(), seq.ground_truth.len());

    let det_text = mot_io::format_mot(&mot_io::detections_to_rows(&seq.detections));
    let det_rows = mot_io::parse_mot(&det_text).unwrap();
    assert_eq!(mot_io::format_mot(&det_rows), det_text);
    let dets_back = mot_io::rows_to_detections(&det_rows).unwrap();
    // Frame counts survive even with dropped detections (frames densify).
    assert_eq!(dets_back.len(), seq.detections.len());

    let emb_text = mot_io::format_embeddings(&seq.embeddings);
    let embs_back = mot_io::parse_embeddings(&emb_text).unwrap();
    assert_eq!(mot_io::format_embeddings(&embs_back), emb_text);
    for (orig, back) in seq.embeddings.iter().zip(&embs_back) {
        assert_eq!(orig.len(), back.len());
    }

    // Evaluating the rounded data against itself is exact.
    let tracked = mot_io::rows_to_tracked(&reparsed).unwrap();
    let scores = evaluate(&gt_back, &tracked, 0.5).unwrap();
    assert_eq!(scores.mota, 1.0);
    assert_eq!(scores.idf1, 1.0);
}
