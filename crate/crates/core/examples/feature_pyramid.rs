//! Crops a padded search patch from a synthetic frame and computes the
//! three-level handcrafted feature pyramid.

use rartrack::bench::{synth_sequence, synth_target, SynthKind, SynthParams};
use rartrack::features::{compute_features, extract_patch, FeatureConfig};

fn main() -> rartrack::error::Result<()> {
    let p = SynthParams::default();
    let (frames, _) = synth_sequence(SynthKind::Static, 2, &p, 4)?;
    let bbox = synth_target(SynthKind::Static, 0, &p);

    let patch = extract_patch(&frames[0], &bbox, 2.0, 128)?;
    let cfg = FeatureConfig::default();
    let pyramid = compute_features(&patch, &cfg)?;

    println!("target {bbox:?} -> patch {}x{}", patch.width(), patch.height());
    for (i, level) in pyramid.levels().iter().enumerate() {
        let norm = level.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("level {i}: {:?}, l2 norm {norm:.3}", level.shape());
    }
    Ok(())
}
