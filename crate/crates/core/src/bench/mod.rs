//! Benchmark plumbing: OTB sequences, synthetic sequences and metrics.

pub mod metrics;
pub mod otb;
pub mod report;
pub mod synth;

pub use metrics::{
    aggregate, center_error, evaluate, overlap, BenchmarkReport, EvalResult, Summary,
};
pub use otb::{
    image_to_otb, load_otb_sequence, otb_to_image, read_rects, write_otb_sequence, write_rects,
    Attribute, RectFormat, Separator, Sequence, SequenceSpec,
};
pub use report::write_report;
pub use synth::{synth_sequence, synth_target, SynthKind, SynthParams};
