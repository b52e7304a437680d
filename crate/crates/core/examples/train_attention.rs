//! A short offline training run of the attention weights on synthetic pairs.

use rartrack::bench::{synth_sequence, Sequence, SynthKind, SynthParams};
use rartrack::graddesc::sgd::SgdConfig;
use rartrack::graddesc::{mean_loss, PairConfig, TrainConfig, Trainer};

fn main() -> rartrack::error::Result<()> {
    let mut sources = Vec::new();
    for (seed, kind) in [SynthKind::Translate, SynthKind::Zoom].into_iter().enumerate() {
        let (frames, spec) = synth_sequence(kind, 20, &SynthParams::default(), seed as u64)?;
        sources.push(Sequence::in_memory(frames, spec)?);
    }

    let base = TrainConfig::default();
    let cfg = TrainConfig {
        pool: 4,
        batch: 4,
        pairs: PairConfig { patch_size: 64, ..base.pairs.clone() },
        sgd: SgdConfig { steps: 20, ..base.sgd.clone() },
        ..base
    };

    let mut trainer = Trainer::new(cfg.clone(), sources)?;
    let before = mean_loss(trainer.params(), trainer.pool(), &cfg.graph)?;
    for row in trainer.run(None)?.iter().step_by(5) {
        println!("step {:>3} lr {:.2e} loss {:.4} |g| {:.3}", row.step, row.lr, row.loss, row.grad_norm);
    }
    let after = mean_loss(trainer.params(), trainer.pool(), &cfg.graph)?;
    println!("pool loss {before:.4} -> {after:.4}");
    Ok(())
}
