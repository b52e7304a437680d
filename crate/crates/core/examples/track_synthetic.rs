//! Tracks the three synthetic sequence kinds and scores each against its
//! ground truth.

use rartrack::attention::{AttentionConfig, AttentionParams};
use rartrack::bench::{evaluate, synth_sequence, Sequence, SynthKind, SynthParams};
use rartrack::tracker::{track_sequence, TrackerConfig};

fn main() -> rartrack::error::Result<()> {
    let params = AttentionParams::init(&AttentionConfig::default());
    let cfg = TrackerConfig::default();
    for kind in [SynthKind::Translate, SynthKind::Zoom, SynthKind::Static] {
        let (frames, spec) = synth_sequence(kind, 60, &SynthParams::default(), 7)?;
        let seq = Sequence::in_memory(frames, spec)?;
        let traj = track_sequence(&seq, &cfg, &params)?;
        let r = evaluate(&traj.rects, &seq.spec)?;
        let last = traj.rects.last().unwrap();
        println!(
            "{kind:?}: mean IoU {:.3}, dp20 {:.2}, auc {:.3}, final box {:.1}x{:.1}",
            r.mean_overlap, r.dp20, r.auc, last.w, last.h
        );
    }
    Ok(())
}
