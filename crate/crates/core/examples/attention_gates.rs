//! Runs the recurrent attention hierarchy over a few frames and reports the
//! gate statistics and how the representation moves away from plain features.

use rartrack::attention::{attend, AttentionConfig, AttentionMode, AttentionParams, AttentionState};
use rartrack::bench::{synth_sequence, synth_target, SynthKind, SynthParams};
use rartrack::features::{compute_features, extract_patch, FeatureConfig};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn main() -> rartrack::error::Result<()> {
    let p = SynthParams::default();
    let (frames, _) = synth_sequence(SynthKind::Translate, 4, &p, 9)?;
    let cfg = AttentionConfig::default();
    let params = AttentionParams::init(&cfg);
    let feat = FeatureConfig::default();

    let mut state = None;
    for (i, frame) in frames.iter().enumerate() {
        let bbox = synth_target(SynthKind::Translate, i, &p);
        let pyramid = compute_features(&extract_patch(frame, &bbox, 2.0, 128)?, &feat)?;
        let (w, h) = pyramid.size();
        let prev = state.unwrap_or_else(|| AttentionState::new(w, h, params.channels()));
        let out = attend(&params, &prev, pyramid.levels(), AttentionMode::Learned)?;
        let gates: Vec<String> = out
            .gates
            .iter()
            .map(|(c, s)| format!("Ψc {:.3} Ψs {:.3}", mean(c.data()), mean(s.data())))
            .collect();
        println!("frame {i}: {} | output {:?}", gates.join(" | "), out.representation.shape());
        state = Some(out.state);
    }
    Ok(())
}
