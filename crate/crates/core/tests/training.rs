//! Pair sampling, the trainer loop and checkpoint resume.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rartrack::bench::{synth_sequence, Sequence, SynthKind, SynthParams};
use rartrack::dcf::{locate, make_context_set, response, train_filter_frame, FilterModel};
use rartrack::error::Error;
use rartrack::graddesc::{mean_loss, sample_pair, PairConfig, TrainConfig, Trainer};
use rartrack::math::{fft2d, hann_window};
use rartrack::params::Parameters;

fn seq(kind: SynthKind, len: usize, seed: u64) -> Sequence {
    let (f, s) = synth_sequence(kind, len, &SynthParams::default(), seed).unwrap();
    Sequence::in_memory(f, s).unwrap()
}

fn small() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.pairs.patch_size = 64;
    cfg.pool = 8;
    cfg.sgd.steps = 6;
    cfg
}

fn argmax(t: &rartrack::math::Tensor3) -> (usize, usize) {
    let (w, _, _) = t.shape();
    let i = t
        .data()
        .iter()
        .enumerate()
        .fold(0, |b, (i, v)| if *v > t.data()[b] { i } else { b });
    (i % w, i / w)
}

#[test]
fn static_pairs_peak_at_origin() {
    let s = seq(SynthKind::Static, 10, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..5 {
        let p = sample_pair(&s, &PairConfig::default(), &mut rng).unwrap();
        assert_ne!(p.template_frame, p.search_frame);
        assert_eq!(p.offset, (0.0, 0.0));
        assert_eq!(argmax(&p.pair.label), (0, 0));
    }
}

#[test]
fn seeded_sampling_repeats() {
    let s = seq(SynthKind::Translate, 30, 1);
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..6)
            .map(|_| {
                let p = sample_pair(&s, &PairConfig::default(), &mut rng).unwrap();
                (p.template_frame, p.search_frame)
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(draw(4), draw(4));
    assert_ne!(draw(4), draw(5));
}

#[test]
fn translating_pairs_label_the_true_offset() {
    let s = seq(SynthKind::Translate, 30, 2);
    let cfg = PairConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..6 {
        let p = sample_pair(&s, &cfg, &mut rng).unwrap();
        let gap = p.search_frame as f64 - p.template_frame as f64;
        // 2 px/frame; crops are 3× the 40 px box resampled to 128 px in 4 px cells
        let cells = 2.0 * gap * 128.0 / 120.0 / 4.0;
        assert!((p.offset.0 - cells).abs() < 1e-9 && p.offset.1 == 0.0);
        let want = (cells.rem_euclid(32.0).round() as usize % 32, 0);
        assert_eq!(argmax(&p.pair.label), want);

        // a plain filter on the raw features finds the same displacement
        let win = hann_window(32, 32).unwrap();
        let cs = make_context_set(&p.pair.template[0], &p.pair.target, 0, &win).unwrap();
        let y0 = rartrack::math::gaussian_label(32, 32, 1.0, (0.0, 0.0)).unwrap();
        let model = FilterModel::from_frame(
            train_filter_frame(&cs, &fft2d(&y0).unwrap(), 1e-2, 0.0).unwrap(),
            1e-2,
            0.0,
            1.0,
        )
        .unwrap();
        let r = response(&model, &p.pair.search[0].mul_plane(&win).unwrap()).unwrap();
        let ((dx, dy), _) = locate(&r);
        assert!((dx - cells).abs() < 1.0 && dy.abs() < 1.0, "({dx}, {dy}) vs {cells}");
    }
}

#[test]
fn single_frame_sequence_is_a_data_error() {
    let mut s = seq(SynthKind::Static, 2, 1);
    s.spec.groundtruth.truncate(1);
    s.spec.frames.truncate(1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        sample_pair(&s, &PairConfig::default(), &mut rng),
        Err(Error::Data(_))
    ));
}

#[test]
fn runs_are_bitwise_repeatable() {
    let run = || {
        let mut t = Trainer::new(small(), vec![seq(SynthKind::Translate, 20, 3)]).unwrap();
        let rows = t.run(None).unwrap();
        (rows, t.params().flat())
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    assert_eq!(a.len(), 6);
    assert!(a.iter().all(|r| r.loss.is_finite() && r.grad_norm.is_finite()));
}

#[test]
fn resume_continues_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    let sources = || vec![seq(SynthKind::Translate, 20, 3)];
    let mut straight = Trainer::new(small(), sources()).unwrap();
    let full = straight.run(None).unwrap();

    let mut half = small();
    half.sgd.steps = 6;
    let mut first = Trainer::new(half.clone(), sources()).unwrap();
    for _ in 0..3 {
        first.step().unwrap();
    }
    let ckpt = dir.path().join("mid.raft");
    first.save_checkpoint(&ckpt).unwrap();
    assert!(dir.path().join("mid.velocity.raft").exists());

    let mut second = Trainer::resume(half, sources(), &ckpt).unwrap();
    assert_eq!(second.step_index(), 3);
    let rest = second.run(Some(dir.path())).unwrap();
    assert_eq!(rest.len(), 3);
    for (a, b) in full[3..].iter().zip(&rest) {
        assert_eq!(a.step, b.step);
        assert!((a.loss - b.loss).abs() <= 1e-9 * a.loss.abs());
    }
    for (a, b) in straight.params().flat().iter().zip(second.params().flat()) {
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-3));
    }
    assert!(dir.path().join("final.raft").exists());
}

#[test]
fn pool_loss_is_reported_per_pair_mean() {
    let t = Trainer::new(small(), vec![seq(SynthKind::Zoom, 20, 4)]).unwrap();
    let l = mean_loss(t.params(), t.pool(), &t.config().graph).unwrap();
    assert!(l > 0.0 && l.is_finite());
}
