use super::*;
use crate::bench::{synth_sequence, Motion, Sequence, SynthSpec};
use crate::features::FrameProvider;
use crate::geometry::{center_error, iou};

/// Default tracker with a cheaper head bootstrap; the tests here exercise
/// the state machine, not the quality of the head.
fn quick(seed: u64) -> TrackerConfig {
    let mut c = TrackerConfig {
        seed,
        ..TrackerConfig::default()
    };
    c.bootstrap.steps = 300;
    c.bootstrap.sampling.frame_pairs = 8;
    c
}

fn sequence(motion: Motion, frames: usize, seed: u64) -> Sequence {
    synth_sequence(&SynthSpec {
        frames,
        motion,
        noise: 2.0,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn start(seq: &Sequence, config: TrackerConfig) -> TrackerState {
    TrackerState::init(&seq.frame(0).unwrap(), seq.ground_truth()[0], config, None).unwrap()
}

fn cell_px(t: &TrackerState) -> f64 {
    TrackerState::window(t.config(), &t.last_state().bbox, t.grid()).cell_px()
}

#[test]
fn config_validation() {
    assert!(TrackerConfig::default().validate().is_ok());
    let d = TrackerConfig::default;
    for bad in [
        TrackerConfig {
            n_proposals: 0,
            ..d()
        },
        TrackerConfig {
            proposal_pos_sigma: 0.0,
            ..d()
        },
        TrackerConfig {
            proposal_scale_sigma: -1.0,
            ..d()
        },
        TrackerConfig {
            scale_penalty: 1.5,
            ..d()
        },
        TrackerConfig {
            update_interval: 0,
            ..d()
        },
    ] {
        assert!(bad.validate().is_err());
    }
}

#[test]
fn init_rejects_target_outside_frame() {
    let seq = sequence(Motion::Static, 1, 0);
    let frame = seq.frame(0).unwrap();
    let gt = BoundingBox::new(400.0, 10.0, 30.0, 30.0).unwrap();
    assert!(matches!(
        TrackerState::init(&frame, gt, quick(0), None),
        Err(Error::TargetLost { .. })
    ));
}

#[test]
fn init_self_detection_within_one_cell() {
    for seed in 0..4 {
        let seq = synth_sequence(&SynthSpec {
            frames: 1,
            target_width: 24.0 + 5.0 * seed as f64,
            target_height: 36.0 - 3.0 * seed as f64,
            seed,
            ..SynthSpec::default()
        })
        .unwrap();
        let t = start(
            &seq,
            TrackerConfig {
                fine_stage: false,
                ..quick(seed)
            },
        );
        let (coarse, _, _) = t.coarse(&seq.frame(0).unwrap()).unwrap();
        let err = center_error(&coarse.bbox, &seq.ground_truth()[0]);
        assert!(err <= cell_px(&t), "seed {seed}: {err} px");
    }
}

#[test]
fn init_and_trajectory_are_deterministic() {
    let seq = sequence(Motion::Linear { dx: 2.0, dy: 1.0 }, 8, 3);
    let mut a = start(&seq, quick(7));
    let mut b = start(&seq, quick(7));
    assert_eq!(a.filter(), b.filter());
    assert_eq!(a.head(), b.head());
    assert_eq!(a.template_descriptor(), b.template_descriptor());
    for i in 1..seq.len() {
        let f = seq.frame(i).unwrap();
        assert_eq!(a.step(&f).unwrap(), b.step(&f).unwrap());
    }
    assert_eq!(a.filter(), b.filter());
}

fn coarse_state() -> TargetState {
    TargetState::new(BoundingBox::new(100.0, 80.0, 30.0, 40.0).unwrap(), 3, 5).unwrap()
}

#[test]
fn proposal_zero_is_the_coarse_box() {
    let c = coarse_state();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = sample_proposals(&c, &TrackerConfig::default(), &mut rng);
    assert_eq!(p.len(), 64);
    assert_eq!(p[0], c.bbox);
    let one = TrackerConfig {
        n_proposals: 1,
        ..TrackerConfig::default()
    };
    assert_eq!(sample_proposals(&c, &one, &mut rng), vec![c.bbox]);
}

#[test]
fn proposal_centers_follow_the_configured_gaussian() {
    let c = coarse_state();
    let config = TrackerConfig {
        n_proposals: 10_001,
        ..TrackerConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = sample_proposals(&c, &config, &mut rng);
    let n = (p.len() - 1) as f64;
    let sigma = config.proposal_pos_sigma * c.bbox.diagonal();
    let (cx, cy) = c.bbox.center();
    let offsets: Vec<(f64, f64)> = p[1..]
        .iter()
        .map(|b| (b.center().0 - cx, b.center().1 - cy))
        .collect();
    let mx = offsets.iter().map(|o| o.0).sum::<f64>() / n;
    let my = offsets.iter().map(|o| o.1).sum::<f64>() / n;
    let bound = 3.0 * sigma / n.sqrt();
    assert!(
        mx.abs() < bound && my.abs() < bound,
        "mean offset ({mx}, {my}) vs {bound}"
    );

    // Count per unit area in rings of width σ/2: highest at the center,
    // falling off once past σ.
    let density: Vec<f64> = (0..6)
        .map(|k| {
            let (r0, r1) = (k as f64 * 0.5 * sigma, (k + 1) as f64 * 0.5 * sigma);
            let count = offsets
                .iter()
                .filter(|o| (r0..r1).contains(&o.0.hypot(o.1)))
                .count();
            count as f64 / (std::f64::consts::PI * (r1 * r1 - r0 * r0))
        })
        .collect();
    for w in density[2..].windows(2) {
        assert!(w[1] < w[0], "{density:?}");
    }
    assert!(density[0] > density[2]);
}

#[test]
fn static_sequence_does_not_drift() {
    let seq = sequence(Motion::Static, 51, 4);
    let mut t = start(&seq, quick(4));
    let gt = seq.ground_truth()[0];
    let cell = cell_px(&t);
    for i in 1..seq.len() {
        let out = t.step(&seq.frame(i).unwrap()).unwrap();
        let err = center_error(&out.state.bbox, &gt);
        assert!(err < cell, "frame {i}: drift {err} px, cell {cell} px");
    }
}

#[test]
fn translating_target_keeps_overlap() {
    let seq = sequence(Motion::Linear { dx: 3.0, dy: 0.0 }, 60, 5);
    let mut t = start(&seq, quick(5));
    for i in 1..seq.len() {
        let out = t.step(&seq.frame(i).unwrap()).unwrap();
        let v = iou(&out.state.bbox, &seq.ground_truth()[i]);
        assert!(v >= 0.6, "frame {i}: IoU {v}");
        assert!((1..=t.config().pyramid.levels()).contains(&out.state.scale_index));
    }
}

#[test]
fn memory_stays_bounded_and_follows_update_interval() {
    let seq = sequence(Motion::Linear { dx: 1.0, dy: 1.0 }, 13, 6);
    let mut config = quick(6);
    config.dcf.memory_capacity = 4;
    config.update_interval = 3;
    let mut t = start(&seq, config);
    let mut sizes = vec![t.memory().len()];
    for i in 1..seq.len() {
        t.step(&seq.frame(i).unwrap()).unwrap();
        sizes.push(t.memory().len());
    }
    // Frames 3, 6, 9 and 12 add samples; capacity caps the last one.
    assert_eq!(sizes, vec![1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4, 4]);
}

#[test]
fn frame_size_mismatch_is_an_error() {
    let seq = sequence(Motion::Static, 1, 0);
    let mut t = start(&seq, quick(0));
    let other = Frame::uniform(100, 100, [0, 0, 0], 2).unwrap();
    assert!(matches!(
        t.step(&other),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn high_confidence_floor_flags_frames() {
    let seq = sequence(Motion::Static, 3, 1);
    let mut t = start(
        &seq,
        TrackerConfig {
            confidence_floor: 1e9,
            ..quick(1)
        },
    );
    let out = t.step(&seq.frame(1).unwrap()).unwrap();
    assert!(out.low_confidence);
}

#[test]
fn coarse_only_emits_the_coarse_state() {
    let seq = sequence(Motion::Linear { dx: 2.0, dy: 0.0 }, 5, 2);
    let mut t = start(
        &seq,
        TrackerConfig {
            fine_stage: false,
            ..quick(2)
        },
    );
    for i in 1..seq.len() {
        let out = t.step(&seq.frame(i).unwrap()).unwrap();
        assert_eq!(out.state, out.coarse);
        assert_eq!(out.proposal, 0);
    }
}
