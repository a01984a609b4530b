use herdsearch::gridworld::{EpisodeConfig, EpisodeState, GridPos};
use herdsearch::perception::{
    abstract_to_grid, accumulate_tracklets, fuse_identity, iou, match_and_score, read_detection_stream,
    render_detections, score_frames, simulate_fusion, synthetic_detection_mission, write_detection_stream, BBox,
    ConfusionSpread, Detection, Frame, FrameRecord, IdentityBelief, ObservationModel, TrackletConfig,
};
use proptest::prelude::*;

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0f64..700.0, 0.0f64..700.0, 1.0f64..200.0, 1.0f64..200.0).prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
}

/// Overlap area of two boxes.
fn overlap(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let h = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    w.max(0.0) * h.max(0.0)
}

fn scores() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..8).prop_flat_map(|k| prop::collection::vec(prop::collection::vec(0.01f64..1.0, k), 1..6))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        let expected = overlap(&a, &b) / (a.area() + b.area() - overlap(&a, &b));
        prop_assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn iou_ignores_translation_and_scale(a in bbox(), b in bbox(), dx in -100.0f64..100.0, s in 0.5f64..4.0) {
        let t = |r: &BBox| BBox::new(s * (r.x + dx), s * r.y, s * r.w, s * r.h);
        prop_assert!((iou(&a, &b) - iou(&t(&a), &t(&b))).abs() < 1e-9);
    }

    #[test]
    fn match_counts_are_conserved(truth in prop::collection::vec(bbox(), 0..6), pred in prop::collection::vec(bbox(), 0..6), thr in 0.1f64..0.9) {
        let m = match_and_score(&truth, &pred, thr);
        prop_assert_eq!(m.tp + m.fp, pred.len());
        prop_assert_eq!(m.tp + m.fn_, truth.len());
        prop_assert!(m.tp <= truth.len().min(pred.len()));
        prop_assert!((0.0..=1.0).contains(&m.accuracy()));
        let none_overlap = truth.iter().all(|t| pred.iter().all(|p| iou(t, p) < thr));
        if none_overlap {
            prop_assert_eq!(m.tp, 0);
        }
    }

    #[test]
    fn perfect_predictions_are_all_matched(truth in prop::collection::vec(bbox(), 0..8)) {
        let m = match_and_score(&truth, &truth, 0.5);
        prop_assert_eq!((m.tp, m.fp, m.fn_), (truth.len(), 0, 0));
    }

    #[test]
    fn fusion_is_order_free_and_normalised(s in scores(), seed in any::<u64>()) {
        let fused = fuse_identity(&s).unwrap();
        prop_assert_eq!(fused.len(), s.len());
        for b in &fused {
            prop_assert!((b.0.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let mut rev = s.clone();
        rev.rotate_left(seed as usize % s.len());
        let last = fused.last().unwrap();
        let other = fuse_identity(&rev).unwrap();
        for (x, y) in last.0.iter().zip(&other.last().unwrap().0) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        // Independent product-of-scores oracle.
        let k = s[0].len();
        let mut prod = vec![1.0; k];
        for f in &s {
            let z: f64 = f.iter().sum();
            for (p, v) in prod.iter_mut().zip(f) {
                *p *= v / z;
            }
        }
        let z: f64 = prod.iter().sum();
        for (x, p) in last.0.iter().zip(&prod) {
            prop_assert!((x - p / z).abs() < 1e-9);
        }
    }

    #[test]
    fn tracklets_hold_one_identity(seed in any::<u64>(), jitter in 0.0f64..40.0) {
        let cfg = EpisodeConfig { num_targets: 17, seed, ..EpisodeConfig::default() };
        let mut state = EpisodeState::spawn(&cfg).unwrap();
        state.agent = GridPos::new(10, 10);
        let frame = Frame::new(0, state.agent);
        let mut rng = herdsearch::rng::seeded(seed ^ 1);
        let frames: Vec<Vec<Detection>> = (0..5).map(|_| render_detections(&state, &frame, jitter, &mut rng)).collect();
        let tracklets = accumulate_tracklets(&frames, &frame, &TrackletConfig::default()).unwrap();
        prop_assert_eq!(tracklets.len(), frames[0].len());
        for t in &tracklets {
            prop_assert_eq!(t.identities().len(), 1);
            prop_assert_eq!(t.len(), 5);
            let id = t.identities()[0];
            let p = state.targets[id].pos;
            prop_assert_eq!(t.cell, (p.row + 2 - state.agent.row, p.col + 2 - state.agent.col));
        }
        prop_assert_eq!(abstract_to_grid(&frames[0], &frame), state.sense());
    }
}

#[test]
fn wrong_window_is_a_contract_error() {
    let frame = Frame::new(0, GridPos::new(0, 0));
    assert!(accumulate_tracklets(&vec![Vec::new(); 4], &frame, &TrackletConfig::default()).is_err());
}

#[test]
fn boundary_centres_go_to_the_higher_bin() {
    let frame = Frame::new(0, GridPos::new(0, 0));
    let d = Detection {
        bbox: BBox::centred(144.0, 288.0, 10.0, 10.0),
        confidence: 0.5,
        identity: None,
    };
    let s = abstract_to_grid(&[d], &frame);
    assert!(s.get(2, 1));
    assert_eq!(s.count(), 1);
}

#[test]
fn documented_detection_replay() {
    let frames = synthetic_detection_mission(111, 2, 7, 4).unwrap();
    assert_eq!(frames.iter().map(|f| f.truth.len()).sum::<usize>(), 111);
    let m = score_frames(&frames, 0.5);
    assert_eq!((m.tp, m.fp, m.fn_), (109, 7, 2));
    assert!((m.accuracy() - 109.0 / 118.0).abs() < 1e-15);
    assert!(synthetic_detection_mission(5, 3, 3, 0).is_err());
}

#[test]
fn confusion_rows_are_distributions() {
    for spread in [ConfusionSpread::Uniform, ConfusionSpread::Neighbour { decay: 0.4 }] {
        let model = ObservationModel {
            spread,
            ..ObservationModel::default()
        };
        for (t, row) in model.confusion_matrix().iter().enumerate() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(row[t], 0.936);
        }
    }
}

#[test]
fn observer_hits_its_calibrated_accuracy() {
    let model = ObservationModel {
        seed: 12,
        ..ObservationModel::default()
    };
    let mut obs = model.observer().unwrap();
    let n = 40_000;
    let hits = (0..n).filter(|i| IdentityBelief(obs.observe(i % 17).unwrap()).argmax() == i % 17).count();
    let acc = hits as f64 / n as f64;
    // Four standard errors.
    assert!((acc - 0.936).abs() < 4.0 * (0.936f64 * 0.064 / n as f64).sqrt(), "{acc}");
    assert!(obs.observe(17).is_err());
}

#[test]
fn fusion_beats_single_frames_for_both_spreads() {
    for spread in [ConfusionSpread::Uniform, ConfusionSpread::Neighbour { decay: 0.5 }] {
        let model = ObservationModel {
            spread,
            seed: 3,
            ..ObservationModel::default()
        };
        let (stats, kept) = simulate_fusion(&model, 5_000, 5, 3).unwrap();
        assert!(stats.fused_accuracy >= stats.single_frame_accuracy);
        assert!(stats.fused_accuracy > 0.98, "{spread:?}: {}", stats.fused_accuracy);
        assert_eq!(kept.len(), 3);
        assert!(kept.iter().all(|(_, b)| b.len() == 5));
    }
}

#[test]
fn degenerate_scores_are_rejected() {
    assert!(fuse_identity(&[]).is_err());
    assert!(fuse_identity(&[vec![0.0, 0.0]]).is_err());
    assert!(fuse_identity(&[vec![0.5, f64::NAN]]).is_err());
    assert!(fuse_identity(&[vec![0.5, 0.5], vec![1.0]]).is_err());
    // A zero score is floored rather than producing NaN.
    let b = fuse_identity(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    assert!(b.iter().all(|x| x.0.iter().all(|v| v.is_finite())));
}

#[test]
fn detection_stream_round_trip() {
    let cfg = EpisodeConfig {
        seed: 2,
        num_targets: 17,
        ..EpisodeConfig::default()
    };
    let state = EpisodeState::spawn(&cfg).unwrap();
    let mut rng = herdsearch::rng::seeded(1);
    let records: Vec<FrameRecord> = (0..3)
        .map(|i| {
            let frame = Frame::new(i, state.agent);
            FrameRecord {
                detections: render_detections(&state, &frame, 10.0, &mut rng),
                frame,
            }
        })
        .collect();
    let mut buf = Vec::new();
    write_detection_stream(&mut buf, &records).unwrap();
    assert_eq!(read_detection_stream(buf.as_slice()).unwrap(), records);
    assert!(read_detection_stream("{oops}\n".as_bytes()).is_err());
}
