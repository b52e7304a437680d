//! Pair sampling and the batched SGD trainer.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::{pair_backward, pair_forward, GraphConfig, TrainingPair};
use super::sgd::{clip_grad_norm, sgd_step, SgdConfig, SgdState};
use crate::attention::{AttentionConfig, AttentionParams};
use crate::bench::Sequence;
use crate::error::{Error, Result};
use crate::features::{compute_features, resample_square, FeatureBackend, FeatureConfig};
use crate::geometry::Rect;
use crate::math::gaussian_label;
use crate::params::{assign_named, Parameters};
use crate::raft;

/// How template/search crops are cut from a sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairConfig {
    pub patch_size: usize,
    pub padding_factor: f64,
    pub label_sigma_factor: f64,
    /// Largest frame distance between template and search; `0` means any.
    pub max_gap: usize,
    pub features: FeatureConfig,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            patch_size: 128,
            padding_factor: 2.0,
            label_sigma_factor: 0.1,
            max_gap: 10,
            features: FeatureConfig::default(),
        }
    }
}

impl PairConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.padding_factor >= 0.0) || !(self.label_sigma_factor > 0.0) {
            return Err(Error::Config(
                "padding_factor must be >= 0 and label_sigma_factor > 0".into(),
            ));
        }
        if self.features.backend != FeatureBackend::Handcrafted {
            return Err(Error::Config(
                "pair sampling crops frames and needs the handcrafted backend".into(),
            ));
        }
        self.features.validate(self.patch_size)
    }
}

/// A sampled pair plus the frame indices it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledPair {
    pub pair: TrainingPair,
    pub template_frame: usize,
    pub search_frame: usize,
    /// Ground-truth displacement of the search target, in feature cells.
    pub offset: (f64, f64),
}

/// Two frames of one sequence, both cropped around the template's box; the
/// label peaks at the search target's displacement (wrapped onto the plane).
pub fn sample_pair<R: Rng>(seq: &Sequence, cfg: &PairConfig, rng: &mut R) -> Result<SampledPair> {
    let n = seq.len();
    if n < 2 {
        return Err(Error::Data(format!(
            "{}: pair sampling needs >= 2 frames, got {n}",
            seq.spec.name
        )));
    }
    let i = rng.gen_range(0..n);
    let gap = if cfg.max_gap == 0 { n } else { cfg.max_gap };
    let lo = i.saturating_sub(gap);
    let hi = (i + gap).min(n - 1);
    let mut j = rng.gen_range(lo..hi);
    if j >= i {
        j += 1;
    }

    let z = seq.target(i);
    let x = seq.target(j);
    let side = z.w.max(z.h) * (1.0 + cfg.padding_factor);
    let center = z.center();
    let cells = cfg.patch_size as f64 / side / cfg.features.cell_size as f64;
    let plane = cfg.patch_size / cfg.features.cell_size;
    let template = compute_features(
        &resample_square(&seq.frame(i)?, center, side, cfg.patch_size)?,
        &cfg.features,
    )?;
    let search = compute_features(
        &resample_square(&seq.frame(j)?, center, side, cfg.patch_size)?,
        &cfg.features,
    )?;
    let (xc, yc) = x.center();
    let offset = ((xc - center.0) * cells, (yc - center.1) * cells);
    let p = plane as f64;
    let sigma = cfg.label_sigma_factor * (z.w * cells * z.h * cells).sqrt();
    let label = gaussian_label(
        plane,
        plane,
        sigma,
        (offset.0.rem_euclid(p), offset.1.rem_euclid(p)),
    )?;
    let target = Rect::from_center(p / 2.0, p / 2.0, z.w * cells, z.h * cells);
    Ok(SampledPair {
        pair: TrainingPair {
            template: template.into_levels(),
            search: search.into_levels(),
            label,
            target,
        },
        template_frame: i,
        search_frame: j,
        offset,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub sgd: SgdConfig,
    pub graph: GraphConfig,
    pub pairs: PairConfig,
    pub attention: AttentionConfig,
    /// Pairs per step; their gradients are averaged.
    pub batch: usize,
    /// Size of a fixed pair pool drawn once up front; `0` samples fresh
    /// pairs every step.
    pub pool: usize,
    /// Checkpoint every this many steps; `0` only at the end.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sgd: SgdConfig::default(),
            graph: GraphConfig::default(),
            pairs: PairConfig::default(),
            attention: AttentionConfig::default(),
            batch: 8,
            pool: 0,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        self.pairs.validate()?;
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if self.attention.channels != self.pairs.features.channels() {
            return Err(Error::Config(format!(
                "attention expects {} channels, features provide {}",
                self.attention.channels,
                self.pairs.features.channels()
            )));
        }
        if self.graph.contexts != 0 && self.graph.contexts != 4 {
            return Err(Error::Config(format!(
                "contexts must be 0 or 4, got {}",
                self.graph.contexts
            )));
        }
        if !(self.graph.lambda1 > 0.0) || !(self.graph.lambda2 >= 0.0) {
            return Err(Error::Config(
                "lambda1 must be > 0 and lambda2 >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    /// Mean loss of the batch before the update.
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("step,lr,loss,grad_norm\n");
    for r in rows {
        let _ = writeln!(out, "{},{:e},{:e},{:e}", r.step, r.lr, r.loss, r.grad_norm);
    }
    out
}

fn step_rng(seed: u64, step: usize, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((step as u64) << 16) | k as u64);
    rng
}

fn draw<R: Rng>(sources: &[Sequence], cfg: &PairConfig, rng: &mut R) -> Result<TrainingPair> {
    let s = &sources[rng.gen_range(0..sources.len())];
    Ok(sample_pair(s, cfg, rng)?.pair)
}

/// Mean loss and mean gradient over `pairs`, summed in order.
pub fn batch_gradient(
    params: &AttentionParams,
    pairs: &[&TrainingPair],
    cfg: &GraphConfig,
) -> Result<(f64, AttentionParams)> {
    let parts: Vec<(f64, AttentionParams)> = pairs
        .par_iter()
        .map(|p| {
            let (loss, cache) = pair_forward(params, p, cfg)?;
            Ok((loss, pair_backward(params, &cache)?.d_params))
        })
        .collect::<Result<_>>()?;
    let inv = 1.0 / pairs.len().max(1) as f64;
    let mut grad = params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l * inv;
        grad.axpy(inv, g);
    }
    Ok((loss, grad))
}

/// Mean loss of `params` over `pairs`.
pub fn mean_loss(params: &AttentionParams, pairs: &[TrainingPair], cfg: &GraphConfig) -> Result<f64> {
    let losses: Vec<f64> = pairs
        .par_iter()
        .map(|p| pair_forward(params, p, cfg).map(|(l, _)| l))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Trainer state: weights, momentum and the pair source.
pub struct Trainer {
    cfg: TrainConfig,
    params: AttentionParams,
    sgd: SgdState,
    sources: Vec<Sequence>,
    pool: Vec<TrainingPair>,
}

impl Trainer {
    /// Fresh weights from `cfg.attention`.
    pub fn new(cfg: TrainConfig, sources: Vec<Sequence>) -> Result<Self> {
        let params = AttentionParams::init(&cfg.attention);
        Self::with_params(cfg, sources, params)
    }

    pub fn with_params(cfg: TrainConfig, sources: Vec<Sequence>, params: AttentionParams) -> Result<Self> {
        cfg.validate()?;
        if !params.matches(&cfg.attention) {
            return Err(Error::Config(
                "initial weights do not match the attention config".into(),
            ));
        }
        if sources.is_empty() {
            return Err(Error::Data("no training sequences".into()));
        }
        let pool = (0..cfg.pool)
            .into_par_iter()
            .map(|k| draw(&sources, &cfg.pairs, &mut step_rng(cfg.seed, usize::MAX >> 16, k)))
            .collect::<Result<_>>()?;
        let sgd = SgdState::new(&params);
        Ok(Trainer {
            cfg,
            params,
            sgd,
            sources,
            pool,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn params(&self) -> &AttentionParams {
        &self.params
    }

    pub fn sgd_state(&self) -> &SgdState {
        &self.sgd
    }

    /// The fixed pair pool (empty when pairs are sampled per step).
    pub fn pool(&self) -> &[TrainingPair] {
        &self.pool
    }

    pub fn step_index(&self) -> usize {
        self.sgd.step
    }

    fn batch(&self) -> Result<Vec<TrainingPair>> {
        let step = self.sgd.step;
        let b = self.cfg.batch;
        if self.pool.is_empty() {
            (0..b)
                .into_par_iter()
                .map(|k| draw(&self.sources, &self.cfg.pairs, &mut step_rng(self.cfg.seed, step, k)))
                .collect()
        } else {
            Ok((0..b)
                .map(|k| self.pool[(step * b + k) % self.pool.len()].clone())
                .collect())
        }
    }

    /// One SGD update on a fresh batch.
    pub fn step(&mut self) -> Result<LogRow> {
        let batch = self.batch()?;
        let refs: Vec<&TrainingPair> = batch.iter().collect();
        let (loss, mut grad) = batch_gradient(&self.params, &refs, &self.cfg.graph)?;
        if !loss.is_finite() {
            return Err(Error::Training {
                param: "loss".into(),
                message: format!("non-finite loss at step {}", self.sgd.step),
            });
        }
        let grad_norm = clip_grad_norm(&mut grad, self.cfg.sgd.clip_norm);
        let step = self.sgd.step;
        let lr = sgd_step(&mut self.params, &grad, &mut self.sgd, &self.cfg.sgd)?;
        Ok(LogRow {
            step,
            lr,
            loss,
            grad_norm,
        })
    }

    /// Runs until `cfg.sgd.steps` updates have been taken, checkpointing into
    /// `out_dir` when given. Returns the rows of this call.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<Vec<LogRow>> {
        let mut rows = Vec::new();
        while self.sgd.step < self.cfg.sgd.steps {
            let row = self.step()?;
            info!(
                "step {} lr {:.2e} loss {:.6e} grad {:.3e}",
                row.step, row.lr, row.loss, row.grad_norm
            );
            rows.push(row);
            let every = self.cfg.checkpoint_every;
            if let Some(dir) = out_dir {
                if every > 0 && self.sgd.step.is_multiple_of(every) && self.sgd.step < self.cfg.sgd.steps {
                    self.save_checkpoint(&checkpoint_path(dir, self.sgd.step))?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.save_checkpoint(&dir.join("final.raft"))?;
        }
        Ok(rows)
    }

    /// Weights to `path`, momentum to the sibling `*.velocity.raft`.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut meta = serde_json::Map::new();
        meta.insert("step".into(), self.sgd.step.into());
        meta.insert("train".into(), serde_json::to_value(&self.cfg)?);
        self.params.save(path, &self.cfg.attention, meta)?;
        let entries = self
            .sgd
            .velocity
            .named()
            .into_iter()
            .map(|s| (s.name, s.shape, s.data));
        raft::save_named(velocity_path(path), "velocity", entries, serde_json::Map::new())
    }

    /// Continues from a checkpoint written by [`Trainer::save_checkpoint`];
    /// `cfg` must describe the same attention layout.
    pub fn resume(cfg: TrainConfig, sources: Vec<Sequence>, path: &Path) -> Result<Self> {
        let (params, attn, meta) = AttentionParams::load(path)?;
        if attn != cfg.attention {
            return Err(Error::Config(format!(
                "{}: checkpoint attention config differs from the training config",
                path.display()
            )));
        }
        let step = meta
            .get("step")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Parse(format!("{}: checkpoint lacks a step count", path.display())))?;
        let mut trainer = Self::with_params(cfg, sources, params)?;
        let (manifest, values) = raft::load_named(velocity_path(path))?;
        if manifest.kind != "velocity" {
            return Err(Error::Parse(format!(
                "{}: expected momentum buffers, found {:?}",
                velocity_path(path).display(),
                manifest.kind
            )));
        }
        assign_named(&mut trainer.sgd.velocity, &values)?;
        trainer.sgd.step = step as usize;
        Ok(trainer)
    }
}

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("step_{step:06}.raft"))
}

/// `ckpt.raft` → `ckpt.velocity.raft`.
pub fn velocity_path(path: &Path) -> PathBuf {
    path.with_extension("velocity.raft")
}

/// Writes the log as CSV.
pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    fs::write(path, log_csv(rows)).map_err(|e| Error::io(path, e))
}
