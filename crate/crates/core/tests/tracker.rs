//! Behavioural properties of a single tracker instance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rartrack::attention::{AttentionConfig, AttentionParams};
use rartrack::bench::{synth_sequence, synth_target, Sequence, SynthKind, SynthParams};
use rartrack::dcf::locate;
use rartrack::error::Error;
use rartrack::features::ImageFrame;
use rartrack::geometry::Rect;
use rartrack::tracker::{track_sequence, Tracker, TrackerConfig};

fn params() -> AttentionParams {
    AttentionParams::init(&AttentionConfig::default())
}

fn scene(kind: SynthKind, len: usize) -> (Vec<ImageFrame>, Rect) {
    let p = SynthParams::default();
    let (frames, _) = synth_sequence(kind, len, &p, 3).unwrap();
    (frames, synth_target(kind, 0, &p))
}

#[test]
fn same_frame_response_peaks_at_origin() {
    let (frames, bbox) = scene(SynthKind::Static, 2);
    let t = Tracker::init(&frames[0], bbox, TrackerConfig::default(), params()).unwrap();
    let ((dx, dy), _) = locate(&t.probe(&frames[0]).unwrap());
    assert!(dx.abs() < 1.0 && dy.abs() < 1.0, "displacement ({dx}, {dy})");
}

#[test]
fn init_is_deterministic() {
    let (frames, bbox) = scene(SynthKind::Static, 2);
    let a = Tracker::init(&frames[0], bbox, TrackerConfig::default(), params()).unwrap();
    let b = Tracker::init(&frames[0], bbox, TrackerConfig::default(), params()).unwrap();
    assert_eq!(a.state(), b.state());
}

#[test]
fn box_touching_the_border_initializes() {
    let (frames, _) = scene(SynthKind::Static, 2);
    for bbox in [Rect::new(0.0, 0.0, 30.0, 30.0), Rect::new(290.0, 210.0, 30.0, 30.0)] {
        let mut t = Tracker::init(&frames[0], bbox, TrackerConfig::default(), params()).unwrap();
        let out = t.step(&frames[1]).unwrap();
        assert!(out.confidence.is_finite());
    }
}

#[test]
fn degenerate_box_is_a_parameter_error() {
    let (frames, _) = scene(SynthKind::Static, 2);
    for bbox in [Rect::new(10.0, 10.0, 0.0, 20.0), Rect::new(10.0, 10.0, 20.0, -3.0)] {
        let err = Tracker::init(&frames[0], bbox, TrackerConfig::default(), params()).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)), "{err:?}");
    }
}

#[test]
fn noise_lowers_the_peak() {
    let (frames, bbox) = scene(SynthKind::Static, 2);
    let t = Tracker::init(&frames[0], bbox, TrackerConfig::default(), params()).unwrap();
    let clean = t.probe_confidence(&frames[1]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut noisy = frames[1].clone();
    let (cx, cy) = bbox.center();
    let half = bbox.w.max(bbox.h) * 1.5;
    for y in 0..noisy.height() {
        for x in 0..noisy.width() {
            if (x as f64 - cx).abs() <= half && (y as f64 - cy).abs() <= half {
                let v: u8 = rng.gen();
                noisy.set(x, y, [v, v, v]);
            }
        }
    }
    let corrupted = t.probe_confidence(&noisy).unwrap();
    assert!(corrupted < clean, "clean {clean}, noise {corrupted}");
}

#[test]
fn trajectory_is_independent_of_thread_count() {
    let p = SynthParams::default();
    let (frames, spec) = synth_sequence(SynthKind::Translate, 20, &p, 11).unwrap();
    let seq = Sequence::in_memory(frames, spec).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| track_sequence(&seq, &TrackerConfig::default(), &params()).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(1));
}
