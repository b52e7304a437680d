//! Writes a sequence in OTB layout, reads it back, scores a jittered
//! trajectory and writes the report (JSON, CSV curves and SVG plots).

use rartrack::bench::{aggregate, evaluate, load_otb_sequence, synth_sequence, write_otb_sequence, write_report, SynthKind, SynthParams};
use rartrack::geometry::Rect;

fn main() -> rartrack::error::Result<()> {
    let dir = std::env::temp_dir().join("rartrack_benchmark_example");
    let (frames, spec) = synth_sequence(SynthKind::Translate, 30, &SynthParams::default(), 5)?;
    write_otb_sequence(dir.join("Translate"), &frames, &spec)?;
    let spec = load_otb_sequence(dir.join("Translate"))?;

    let jittered: Vec<Rect> = spec
        .groundtruth
        .iter()
        .enumerate()
        .map(|(i, r)| Rect::new(r.x + (i % 7) as f64 * 3.0, r.y, r.w, r.h))
        .collect();
    let result = evaluate(&jittered, &spec)?;
    println!("dp20 {:.3}, auc {:.3}, center error {:.2} px", result.dp20, result.auc, result.mean_center_error);

    let report = aggregate(vec![result]);
    write_report(dir.join("report"), &report)?;
    println!("report written to {}", dir.join("report").display());
    Ok(())
}
