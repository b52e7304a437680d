//! Differentiable correlation layer, end-to-end gradients and the SGD trainer.

pub mod correlation;
pub mod gradcheck;
pub mod graph;
pub mod sgd;
pub mod train;

pub use correlation::{backward, forward_loss, CorrelationCache, CorrelationGrads};
pub use graph::{pair_backward, pair_forward, pair_loss, GradientSet, GraphConfig, TrainingPair};
pub use sgd::{clip_grad_norm, sgd_step, SgdConfig, SgdState};
pub use train::{
    batch_gradient, log_csv, mean_loss, sample_pair, write_log, LogRow, PairConfig, SampledPair,
    TrainConfig, Trainer,
};
