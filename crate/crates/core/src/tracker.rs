//! Online tracking: crop, featurize, attend, correlate, localize, adapt
//! scale and update, once per frame.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{
    apply_gates, attend, AttentionMode, AttentionOutput, AttentionParams, AttentionState,
    LevelGates,
};
use crate::bench::{image_to_otb, Sequence};
use crate::dcf::{
    locate, make_context_set, response, train_filter_frame, FilterModel, FrameTerms, ResponseMap,
};
use crate::error::{Error, Result};
use crate::features::{
    compute_features, resample_square, FeatureBackend, FeatureConfig, ImageFrame,
};
use crate::geometry::Rect;
use crate::math::{fft2d, gaussian_label, hann_window, Spectrum, Tensor3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Search region side is `max(w, h) · (1 + padding_factor)`.
    pub padding_factor: f64,
    pub scale_base: f64,
    pub scale_count: usize,
    /// Ridge weight; features are unit-norm per plane, so this is relative
    /// to the per-frequency energy of the template.
    pub lambda1: f64,
    /// Weight of the context patches.
    pub lambda2: f64,
    /// Filter update rate.
    pub eta: f64,
    /// Weight of the chosen scale in the damped scale update.
    pub scale_damping: f64,
    /// Multiplier on peak values of non-unity scales.
    pub scale_penalty: f64,
    pub patch_size: usize,
    /// Context patches per frame, 0 or 4.
    pub contexts: usize,
    /// Label bandwidth as a fraction of the target size in cells.
    pub label_sigma_factor: f64,
    pub attention_mode: AttentionMode,
    /// Run the attention branches on every scale instead of reusing the
    /// unity-scale gates.
    pub attention_per_scale: bool,
    pub features: FeatureConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            padding_factor: 2.0,
            scale_base: 1.02,
            scale_count: 3,
            lambda1: 0.1,
            lambda2: 0.1,
            eta: 0.013,
            scale_damping: 0.6,
            scale_penalty: 0.97,
            patch_size: 128,
            contexts: 4,
            label_sigma_factor: 0.05,
            attention_mode: AttentionMode::Learned,
            attention_per_scale: false,
            features: FeatureConfig::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.scale_count.is_multiple_of(2) {
            return bad(format!("scale_count must be odd, got {}", self.scale_count));
        }
        if !(self.scale_base > 1.0) {
            return bad(format!("scale_base must exceed 1, got {}", self.scale_base));
        }
        if !(self.scale_penalty > 0.0 && self.scale_penalty <= 1.0) {
            return bad(format!(
                "scale_penalty must lie in (0, 1], got {}",
                self.scale_penalty
            ));
        }
        if !(self.scale_damping > 0.0 && self.scale_damping <= 1.0) {
            return bad(format!(
                "scale_damping must lie in (0, 1], got {}",
                self.scale_damping
            ));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad(format!("eta must lie in [0, 1], got {}", self.eta));
        }
        if !(self.lambda1 > 0.0) || !(self.lambda2 >= 0.0) {
            return bad("lambda1 must be > 0 and lambda2 >= 0".into());
        }
        if !(self.padding_factor >= 0.0) || !(self.label_sigma_factor > 0.0) {
            return bad("padding_factor must be >= 0 and label_sigma_factor > 0".into());
        }
        if self.contexts != 0 && self.contexts != 4 {
            return bad(format!("contexts must be 0 or 4, got {}", self.contexts));
        }
        if self.features.backend != FeatureBackend::Handcrafted {
            return bad("the online tracker computes handcrafted features; precomputed pyramids go through the library API".into());
        }
        self.features.validate(self.patch_size)
    }

    /// Scale factors `a^{-(S-1)/2}, …, 1, …, a^{(S-1)/2}`.
    pub fn scale_factors(&self) -> Vec<f64> {
        let half = (self.scale_count / 2) as i32;
        (-half..=half).map(|i| self.scale_base.powi(i)).collect()
    }

    pub fn plane_size(&self) -> usize {
        self.patch_size / self.features.cell_size
    }
}

/// Everything carried from one frame to the next.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackerState {
    /// Current estimate in 0-indexed image coordinates.
    pub bbox: Rect,
    /// Size of the initial box; the current size is `base_size · scale`.
    pub base_size: (f64, f64),
    pub scale: f64,
    pub attn: AttentionState,
    pub model: FilterModel,
    pub frame_index: usize,
}

/// Result of one tracking step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub bbox: Rect,
    pub confidence: f64,
    /// Scale factor that won this frame.
    pub chosen_scale: f64,
    /// Response of every scale, in [`TrackerConfig::scale_factors`] order.
    pub responses: Vec<ResponseMap>,
}

/// A tracker instance: configuration, attention weights and state.
#[derive(Clone, Debug)]
pub struct Tracker {
    cfg: TrackerConfig,
    params: AttentionParams,
    window: Tensor3,
    label: Spectrum,
    state: TrackerState,
}

fn crop_side(base_size: (f64, f64), scale: f64, padding: f64) -> f64 {
    base_size.0.max(base_size.1) * (1.0 + padding) * scale
}

impl Tracker {
    /// Builds the first-frame filter around `bbox` (0-indexed image coordinates).
    pub fn init(
        frame: &ImageFrame,
        bbox: Rect,
        cfg: TrackerConfig,
        params: AttentionParams,
    ) -> Result<Self> {
        cfg.validate()?;
        if !bbox.is_valid() || bbox.w < 1.0 || bbox.h < 1.0 {
            return Err(Error::Parameter(format!("degenerate initial box {bbox:?}")));
        }
        if params.channels() != cfg.features.channels() {
            return Err(Error::Config(format!(
                "attention expects {} channels, features provide {}",
                params.channels(),
                cfg.features.channels()
            )));
        }
        let n = cfg.plane_size();
        let window = hann_window(n, n)?;
        let base_size = (bbox.w, bbox.h);
        let side = crop_side(base_size, 1.0, cfg.padding_factor);
        let cells = cfg.patch_size as f64 / side / cfg.features.cell_size as f64;
        let sigma = cfg.label_sigma_factor * (bbox.w * cells * bbox.h * cells).sqrt();
        let label = fft2d(&gaussian_label(n, n, sigma, (0.0, 0.0))?)?;

        let attn = AttentionState::new(n, n, params.channels());
        let (attn, terms) = template_terms(
            &cfg, &params, &window, &label, &attn, base_size, frame, &bbox, 1.0,
        )?;
        let model = FilterModel::from_frame(terms, cfg.lambda1, cfg.lambda2, cfg.eta)?;
        Ok(Tracker {
            window,
            label,
            state: TrackerState {
                bbox,
                base_size,
                scale: 1.0,
                attn,
                model,
                frame_index: 0,
            },
            cfg,
            params,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn params(&self) -> &AttentionParams {
        &self.params
    }

    pub fn state(&self) -> &TrackerState {
        &self.state
    }

    /// Representation of one search crop.
    fn represent(
        &self,
        levels: &[Tensor3],
        gates: Option<&[LevelGates]>,
    ) -> Result<(Tensor3, Option<AttentionOutput>)> {
        match gates {
            Some(g) => Ok((apply_gates(&self.params, levels, g)?, None)),
            None => {
                let out = attend(
                    &self.params,
                    &self.state.attn,
                    levels,
                    self.cfg.attention_mode,
                )?;
                Ok((out.representation.clone(), Some(out)))
            }
        }
    }

    /// Tracks one frame and updates filter, attention state and scale.
    pub fn step(&mut self, frame: &ImageFrame) -> Result<StepOutput> {
        let factors = self.cfg.scale_factors();
        let unity = factors.len() / 2;
        let sides: Vec<f64> = factors
            .iter()
            .map(|s| {
                crop_side(
                    self.state.base_size,
                    self.state.scale * s,
                    self.cfg.padding_factor,
                )
            })
            .collect();

        let center = self.state.bbox.center();
        let shared =
            !self.cfg.attention_per_scale && self.cfg.attention_mode != AttentionMode::Disabled;
        let unity_levels = pyramid(&self.cfg, frame, center, sides[unity])?;
        let (unity_rep, unity_out) = self.represent(&unity_levels, None)?;
        let gates = if shared {
            unity_out.map(|o| o.gates)
        } else {
            None
        };
        let probes: Vec<Tensor3> = sides
            .par_iter()
            .enumerate()
            .map(|(i, &side)| {
                let rep = if i == unity {
                    unity_rep.clone()
                } else {
                    let levels = pyramid(&self.cfg, frame, center, side)?;
                    self.represent(&levels, gates.as_deref())?.0
                };
                rep.mul_plane(&self.window)
            })
            .collect::<Result<_>>()?;
        let responses: Vec<ResponseMap> = probes
            .par_iter()
            .map(|x| response(&self.state.model, x))
            .collect::<Result<_>>()?;

        // Peaks are compared per unit of probe energy: feature amplitude
        // depends on how much of the crop the target fills.
        let energy: Vec<f64> = probes.iter().map(|x| x.norm_sq().sqrt()).collect();
        let mut best = unity;
        let score = |i: usize| {
            let p = responses[i].peak_height() * energy[unity] / energy[i].max(f64::MIN_POSITIVE);
            if i == unity {
                p
            } else {
                p * self.cfg.scale_penalty
            }
        };
        for i in 0..factors.len() {
            if score(i) > score(best) {
                best = i;
            }
        }
        let ((dx, dy), confidence) = locate(&responses[best]);
        let px_per_cell =
            self.cfg.features.cell_size as f64 * sides[best] / self.cfg.patch_size as f64;
        let (cx, cy) = self.state.bbox.center();
        let d = self.cfg.scale_damping;
        let mut chosen = factors[best];
        // Sub-step scale from a parabola through the neighbouring scores.
        if best > 0 && best + 1 < factors.len() {
            let t = crate::dcf::parabola_offset(score(best - 1), score(best), score(best + 1));
            chosen *= self.cfg.scale_base.powf(t);
        }
        let scale = (1.0 - d) * self.state.scale + d * self.state.scale * chosen;
        let (w, h) = (
            self.state.base_size.0 * scale,
            self.state.base_size.1 * scale,
        );
        let cx = (cx + dx * px_per_cell).clamp(0.0, frame.width() as f64);
        let cy = (cy + dy * px_per_cell).clamp(0.0, frame.height() as f64);
        let bbox = Rect::from_center(cx, cy, w, h);
        debug!(
            "frame {}: scale {:.4} ({}), shift ({dx:.2}, {dy:.2}) cells, peak {confidence:.4}",
            self.state.frame_index + 1,
            scale,
            chosen,
        );

        self.state.bbox = bbox;
        self.state.scale = scale;
        let (attn, terms) = template_terms(
            &self.cfg,
            &self.params,
            &self.window,
            &self.label,
            &self.state.attn,
            self.state.base_size,
            frame,
            &bbox,
            scale,
        )?;
        self.state.model.update(&terms)?;
        self.state.attn = attn;
        self.state.frame_index += 1;
        Ok(StepOutput {
            bbox,
            confidence,
            chosen_scale: chosen,
            responses,
        })
    }

    /// Response of the current model to `frame` at the current position and
    /// scale, without updating anything.
    pub fn probe(&self, frame: &ImageFrame) -> Result<ResponseMap> {
        let side = crop_side(
            self.state.base_size,
            self.state.scale,
            self.cfg.padding_factor,
        );
        let levels = pyramid(&self.cfg, frame, self.state.bbox.center(), side)?;
        let (rep, _) = self.represent(&levels, None)?;
        response(&self.state.model, &rep.mul_plane(&self.window)?)
    }

    pub fn probe_confidence(&self, frame: &ImageFrame) -> Result<f64> {
        Ok(self.probe(frame)?.peak_value)
    }
}

fn pyramid(
    cfg: &TrackerConfig,
    frame: &ImageFrame,
    center: (f64, f64),
    side: f64,
) -> Result<Vec<Tensor3>> {
    let patch = resample_square(frame, center, side, cfg.patch_size)?;
    Ok(compute_features(&patch, &cfg.features)?.into_levels())
}

/// Attends the crop around `bbox` with the committed state and returns the
/// next state plus this frame's filter terms.
#[allow(clippy::too_many_arguments)]
fn template_terms(
    cfg: &TrackerConfig,
    params: &AttentionParams,
    window: &Tensor3,
    label: &Spectrum,
    state: &AttentionState,
    base_size: (f64, f64),
    frame: &ImageFrame,
    bbox: &Rect,
    scale: f64,
) -> Result<(AttentionState, FrameTerms)> {
    let side = crop_side(base_size, scale, cfg.padding_factor);
    let levels = pyramid(cfg, frame, bbox.center(), side)?;
    let out = attend(params, state, &levels, cfg.attention_mode)?;
    let n = cfg.plane_size() as f64;
    let cells = cfg.patch_size as f64 / side / cfg.features.cell_size as f64;
    let target = Rect::from_center(n / 2.0, n / 2.0, bbox.w * cells, bbox.h * cells);
    let cs = make_context_set(&out.representation, &target, cfg.contexts, window)?;
    let terms = train_filter_frame(&cs, label, cfg.lambda1, cfg.lambda2)?;
    Ok((out.state, terms))
}

/// Per-frame boxes (OTB convention) and confidences of one run.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Trajectory {
    pub rects: Vec<Rect>,
    pub confidences: Vec<f64>,
}

impl Trajectory {
    /// One `x,y,w,h` line per frame.
    pub fn to_otb_text(&self) -> String {
        let mut out = String::new();
        for r in &self.rects {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                fmt_num(r.x),
                fmt_num(r.y),
                fmt_num(r.w),
                fmt_num(r.h)
            );
        }
        out
    }

    pub fn confidence_csv(&self) -> String {
        let mut out = String::from("frame,confidence\n");
        for (i, c) in self.confidences.iter().enumerate() {
            let _ = writeln!(out, "{},{}", i + 1, fmt_num(*c));
        }
        out
    }

    pub fn write(&self, trajectory: impl AsRef<Path>, confidences: impl AsRef<Path>) -> Result<()> {
        let (t, c) = (trajectory.as_ref(), confidences.as_ref());
        fs::write(t, self.to_otb_text()).map_err(|e| Error::io(t, e))?;
        fs::write(c, self.confidence_csv()).map_err(|e| Error::io(c, e))
    }
}

fn fmt_num(v: f64) -> String {
    let r = (v * 1e4).round() / 1e4;
    if r == 0.0 {
        "0".into()
    } else {
        r.to_string()
    }
}

/// Tracks a whole sequence from its first ground-truth box.
pub fn track_sequence(
    seq: &Sequence,
    cfg: &TrackerConfig,
    params: &AttentionParams,
) -> Result<Trajectory> {
    track_sequence_with(seq, cfg, params, |_, _| Ok(()))
}

/// Like [`track_sequence`], calling `on_step(frame_index, output)` after every
/// tracked frame.
pub fn track_sequence_with(
    seq: &Sequence,
    cfg: &TrackerConfig,
    params: &AttentionParams,
    mut on_step: impl FnMut(usize, &StepOutput) -> Result<()>,
) -> Result<Trajectory> {
    if seq.is_empty() {
        return Err(Error::Data(format!("{}: empty sequence", seq.spec.name)));
    }
    let first = seq.target(0);
    let mut tracker = Tracker::init(&seq.frame(0)?, first, cfg.clone(), params.clone())?;
    let mut traj = Trajectory {
        rects: vec![seq.spec.groundtruth[0]],
        confidences: vec![1.0],
    };
    for i in 1..seq.len() {
        let out = tracker.step(&seq.frame(i)?)?;
        on_step(i, &out)?;
        traj.rects.push(image_to_otb(&out.bbox));
        traj.confidences.push(out.confidence);
    }
    Ok(traj)
}
