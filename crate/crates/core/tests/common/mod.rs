//! Oracles and scenario runners shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::fs;

use rartrack::attention::{AttentionConfig, AttentionMode, AttentionParams, RefineParams};
use rartrack::bench::{
    evaluate, read_rects, synth_sequence, write_rects, Attribute, RectFormat, Sequence, SequenceSpec,
    SynthKind, SynthParams,
};
use rartrack::dcf::ResponseMap;
use rartrack::geometry::Rect;
use rartrack::graddesc::sgd::SgdConfig;
use rartrack::graddesc::{mean_loss, LogRow, PairConfig, TrainConfig, Trainer};
use rartrack::math::ifft2d;
use rartrack::tracker::{track_sequence, track_sequence_with, TrackerConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rartrack::dcf::{response, ContextSet, FilterModel};
use rartrack::math::{fft2d, gaussian_label, Tensor3};

pub fn random(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Tensor3 {
    Tensor3::from_fn(w, h, c, |_, _, _| rng.gen_range(-1.0..1.0))
}

/// Row `s` holds `t` circularly shifted so that `(row · w) = Σ_p w(p) t(p + s)`.
pub fn circulant(t: &Tensor3) -> DMatrix<f64> {
    let (w, h, c) = t.shape();
    let n = w * h;
    DMatrix::from_fn(n, n * c, |s, col| {
        let (sx, sy) = (s % w, s / w);
        let (p, ch) = (col / c, col % c);
        let (px, py) = (p % w, p / w);
        t.get((px + sx) % w, (py + sy) % h, ch)
    })
}

pub fn dense_response(cs: &ContextSet, y: &Tensor3, x: &Tensor3, l1: f64, l2: f64) -> Vec<f64> {
    let x0 = circulant(&cs.target);
    let mut gram = x0.transpose() * &x0;
    for ctx in &cs.contexts {
        let xi = circulant(ctx);
        gram += (xi.transpose() * &xi) * l2;
    }
    for i in 0..gram.nrows() {
        gram[(i, i)] += l1;
    }
    let rhs = x0.transpose() * DVector::from_column_slice(y.data());
    let w = gram
        .cholesky()
        .expect("ridge system is positive definite")
        .solve(&rhs);
    (circulant(x) * w).iter().copied().collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

pub fn worst_oracle_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (l1, l2) = (1e-4, 0.1);
    let mut worst: f64 = 0.0;
    for (w, h) in [(4, 4), (4, 8), (8, 4), (8, 8)] {
        for c in [1, 2] {
            for k in [0, 4] {
                let cs = ContextSet::new(
                    random(&mut rng, w, h, c),
                    (0..k).map(|_| random(&mut rng, w, h, c)).collect(),
                )
                .unwrap();
                let y = gaussian_label(w, h, 1.0, (0.0, 0.0)).unwrap();
                let model = FilterModel::train(&cs, &fft2d(&y).unwrap(), l1, l2, 1.0).unwrap();
                for probe in [cs.target.clone(), random(&mut rng, w, h, c)] {
                    let fast = response(&model, &probe).unwrap();
                    let dense = dense_response(&cs, &y, &probe, l1, l2);
                    worst = worst.max(rel_err(fast.plane.data(), &dense));
                }
            }
        }
    }
    worst
}


/// Direct double-sum DFT of every channel plane, `(re, im)` per entry in the
/// library's channel-last layout.
pub fn naive_dft(t: &Tensor3) -> Vec<(f64, f64)> {
    let (w, h, c) = t.shape();
    let mut out = vec![(0.0, 0.0); w * h * c];
    for v in 0..h {
        for u in 0..w {
            for ch in 0..c {
                let (mut re, mut im) = (0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let a = -2.0 * PI * ((u * x) as f64 / w as f64 + (v * y) as f64 / h as f64);
                        let s = t.get(x, y, ch);
                        re += s * a.cos();
                        im += s * a.sin();
                    }
                }
                out[(v * w + u) * c + ch] = (re, im);
            }
        }
    }
    out
}

/// Worst (round trip, naive DFT, Parseval) relative errors over all
/// power-of-two shapes with sides 4 to 64.
pub fn fft_errors(seed: u64, channels: usize) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sides = [4, 8, 16, 32, 64];
    let (mut round, mut naive, mut parseval) = (0.0f64, 0.0f64, 0.0f64);
    for &w in &sides {
        for &h in &sides {
            let t = random(&mut rng, w, h, channels);
            let spec = fft2d(&t).unwrap();
            let back = ifft2d(&spec).unwrap();
            round = round.max(rel_err(back.data(), t.data()));

            let reference = naive_dft(&t);
            let got: Vec<f64> = spec.data().iter().flat_map(|z| [z.re, z.im]).collect();
            let want: Vec<f64> = reference.iter().flat_map(|&(re, im)| [re, im]).collect();
            naive = naive.max(rel_err(&got, &want));

            let energy: f64 = t.data().iter().map(|v| v * v).sum();
            let spectral: f64 = spec.data().iter().map(|z| z.norm_sqr()).sum::<f64>() / (w * h) as f64;
            parseval = parseval.max((energy - spectral).abs() / energy);
        }
    }
    (round, naive, parseval)
}

pub fn synth(kind: SynthKind, len: usize, seed: u64) -> Sequence {
    let (frames, spec) = synth_sequence(kind, len, &SynthParams::default(), seed).unwrap();
    Sequence::in_memory(frames, spec).unwrap()
}

/// Tracks a synthetic sequence with default settings and random attention.
pub fn track_synth(kind: SynthKind, len: usize, seed: u64) -> (Sequence, Vec<Rect>) {
    let seq = synth(kind, len, seed);
    let params = AttentionParams::init(&AttentionConfig::default());
    let traj = track_sequence(&seq, &TrackerConfig::default(), &params).unwrap();
    (seq, traj.rects)
}

pub struct SynthOutcome {
    pub translate_iou: f64,
    pub translate_dp20: f64,
    /// Estimated over true final scale.
    pub zoom_ratio: f64,
    /// Largest coordinate error of the static run, pixels.
    pub static_error: f64,
    pub static_iou: f64,
}

pub fn synthetic_tracking() -> SynthOutcome {
    let (seq, rects) = track_synth(SynthKind::Translate, 100, 7);
    let r = evaluate(&rects, &seq.spec).unwrap();
    let (zseq, zrects) = track_synth(SynthKind::Zoom, 100, 7);
    let gt = &zseq.spec.groundtruth;
    let zoom_ratio = (zrects[99].w / gt[0].w) / (gt[99].w / gt[0].w);
    let (sseq, srects) = track_synth(SynthKind::Static, 50, 7);
    let mut static_error = 0.0f64;
    for (a, b) in srects.iter().zip(&sseq.spec.groundtruth) {
        for (p, q) in [(a.x, b.x), (a.y, b.y), (a.w, b.w), (a.h, b.h)] {
            static_error = static_error.max((p - q).abs());
        }
    }
    let static_iou = evaluate(&srects, &sseq.spec).unwrap().mean_overlap;
    SynthOutcome {
        static_iou,
        translate_iou: r.mean_overlap,
        translate_dp20: r.dp20,
        zoom_ratio,
        static_error,
    }
}

/// Configuration of the learning-signal run: 8 fixed pairs as one full batch.
pub fn learning_config() -> TrainConfig {
    let base = TrainConfig::default();
    TrainConfig {
        pool: 8,
        batch: 8,
        pairs: PairConfig { patch_size: 64, ..base.pairs.clone() },
        sgd: SgdConfig { steps: 200, ..base.sgd.clone() },
        ..base
    }
}

pub fn learning_sources() -> Vec<Sequence> {
    [SynthKind::Translate, SynthKind::Zoom, SynthKind::Static]
        .iter()
        .enumerate()
        .map(|(i, k)| synth(*k, 30, i as u64 + 1))
        .collect()
}

/// Pool loss before and after training, plus the per-step log.
pub fn learning_run(cfg: &TrainConfig) -> (f64, f64, Vec<LogRow>) {
    let mut t = Trainer::new(cfg.clone(), learning_sources()).unwrap();
    let before = mean_loss(t.params(), t.pool(), &cfg.graph).unwrap();
    let rows = t.run(None).unwrap();
    let after = mean_loss(t.params(), t.pool(), &cfg.graph).unwrap();
    (before, after, rows)
}

/// Per-step response maps of a tracker run with identity refinement.
pub fn ablation_responses(seq: &Sequence, mode: AttentionMode) -> Vec<Vec<ResponseMap>> {
    let mut params = AttentionParams::init(&AttentionConfig::default());
    params.refine = RefineParams::identity(params.channels());
    let cfg = TrackerConfig {
        attention_mode: mode,
        ..TrackerConfig::default()
    };
    let mut out = Vec::new();
    track_sequence_with(seq, &cfg, &params, |_, step| {
        out.push(step.responses.clone());
        Ok(())
    })
    .unwrap();
    out
}

/// Largest difference between paired maps, relative to each reference map's peak magnitude.
pub fn max_map_difference(a: &[Vec<ResponseMap>], b: &[Vec<ResponseMap>]) -> f64 {
    let mut worst = 0.0f64;
    for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
        let scale = y.plane.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        for (p, q) in x.plane.data().iter().zip(y.plane.data()) {
            worst = worst.max((p - q).abs() / scale);
        }
    }
    worst
}

pub fn fixture_spec(gt: Vec<Rect>) -> SequenceSpec {
    SequenceSpec {
        name: "fixture".into(),
        frames: vec![],
        groundtruth: gt,
        attributes: vec![Attribute::SV],
        format: RectFormat::default(),
    }
}

/// The 4-frame fixture with overlaps {1, 0.5, 0.25, 0}: trajectory and ground truth.
pub fn four_frame_fixture() -> (Vec<Rect>, Vec<Rect>) {
    let gt = vec![Rect::new(0.0, 0.0, 4.0, 4.0); 4];
    let tr = vec![
        Rect::new(0.0, 0.0, 4.0, 4.0),
        Rect::new(0.0, 0.0, 4.0, 2.0),
        Rect::new(0.0, 0.0, 2.0, 2.0),
        Rect::new(10.0, 10.0, 4.0, 4.0),
    ];
    (tr, gt)
}

/// Success curve of the 4-frame fixture by hand: at thresholds 0, 0.05, ..., 1
/// the frames with overlap strictly above the threshold (exact match at 1).
pub fn four_frame_expected_success() -> Vec<f64> {
    let mut s = vec![0.75; 5]; // 0.00..0.20: overlaps 1, 0.5, 0.25
    s.extend([0.5; 5]); // 0.25..0.45: 1, 0.5
    s.extend([0.25; 11]); // 0.50..1.00: only the exact match
    s
}

/// Writes `text` as a ground-truth file, reads it, writes it back and
/// returns the bytes of the copy.
pub fn otb_round_trip(text: &str) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("groundtruth_rect.txt");
    fs::write(&src, text).unwrap();
    let (rects, format) = read_rects(&src).unwrap();
    let dst = dir.path().join("copy.txt");
    write_rects(&dst, &rects, &format).unwrap();
    fs::read(&dst).unwrap()
}
