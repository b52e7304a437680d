//! Unit gates with an identity-sum refinement are the same tracker as no
//! attention at all.

mod common;

use common::{ablation_responses, max_map_difference, synth};
use rartrack::attention::AttentionMode;
use rartrack::bench::SynthKind;

#[test]
fn unit_gates_match_no_attention() {
    let seq = synth(SynthKind::Translate, 20, 2);
    let forced = ablation_responses(&seq, AttentionMode::Forced { channel: 1.0, spatial: 1.0 });
    let plain = ablation_responses(&seq, AttentionMode::Disabled);
    assert_eq!(forced.len(), plain.len());
    let worst = max_map_difference(&forced, &plain);
    eprintln!("worst relative difference {worst:e}");
    assert!(worst < 1e-6);

    // learned gates do change the maps, so the comparison is not vacuous
    let learned = ablation_responses(&seq, AttentionMode::Learned);
    assert!(learned[0][1].plane != plain[0][1].plane);
}
