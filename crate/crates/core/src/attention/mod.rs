//! Hierarchical attention: conv-LSTM inter-frame attention, channel and
//! spatial intra-frame attention, residual reinforcement and coarse-to-fine
//! refinement.
//!
//! Each pyramid level has its own parameters and recurrent state. A forward
//! pass over one frame reads the previous [`AttentionState`] and returns the
//! next one; nothing is mutated in place.

pub mod channel;
pub mod gates;
pub mod lstm;
pub mod refine;
pub mod reinforce;
pub mod spatial;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use channel::{channel_attention, ChannelAttnParams};
pub use gates::{project_gates, GateProjParams, GateProjections};
pub use lstm::{lstm_step, ConvLstmParams, ConvLstmState};
pub use refine::{refine, RefineParams};
pub use reinforce::reinforce;
pub use spatial::{spatial_attention, SpatialAttnParams};

use crate::error::{Error, Result};
use crate::features::LEVELS;
use crate::math::Tensor3;
use crate::params::{assign_named, zeros_like, ParamSlot, Parameters};
use crate::raft;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionConfig {
    /// Channels of every input level.
    pub channels: usize,
    /// Channels of the refined representation handed to the filter.
    pub out_channels: usize,
    /// Channel-MLP reduction ratio `r`.
    pub reduction: usize,
    /// Hidden width of the per-site spatial MLP.
    pub spatial_hidden: usize,
    /// One kernel pair shared by all four LSTM gates.
    pub shared_gates: bool,
    pub forget_bias: f64,
    pub seed: u64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            channels: 9,
            out_channels: 9,
            reduction: 4,
            spatial_hidden: 4,
            shared_gates: false,
            forget_bias: 1.0,
            seed: 0,
        }
    }
}

/// Parameters of one hierarchy level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelParams {
    pub lstm: ConvLstmParams,
    pub gates: GateProjParams,
    pub channel: ChannelAttnParams,
    pub spatial: SpatialAttnParams,
}

impl Parameters for LevelParams {
    fn slots<'a>(&'a self, prefix: &str, out: &mut Vec<ParamSlot<&'a [f64]>>) {
        self.lstm.slots(&format!("{prefix}.lstm"), out);
        self.gates.slots(&format!("{prefix}.gates"), out);
        self.channel.slots(&format!("{prefix}.channel"), out);
        self.spatial.slots(&format!("{prefix}.spatial"), out);
    }

    fn slots_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamSlot<&'a mut [f64]>>) {
        self.lstm.slots_mut(&format!("{prefix}.lstm"), out);
        self.gates.slots_mut(&format!("{prefix}.gates"), out);
        self.channel.slots_mut(&format!("{prefix}.channel"), out);
        self.spatial.slots_mut(&format!("{prefix}.spatial"), out);
    }
}

/// Every learnable weight of the attention module.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub levels: Vec<LevelParams>,
    pub refine: RefineParams,
}

impl AttentionParams {
    /// Glorot-initialized weights, zero biases, forget-gate bias from the config.
    pub fn init(cfg: &AttentionConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let c = cfg.channels;
        let levels = (0..LEVELS)
            .map(|_| LevelParams {
                lstm: ConvLstmParams::init(c, cfg.shared_gates, cfg.forget_bias, &mut rng),
                gates: GateProjParams::init(c, &mut rng),
                channel: ChannelAttnParams::init(c, cfg.reduction, &mut rng),
                spatial: SpatialAttnParams::init(cfg.spatial_hidden, &mut rng),
            })
            .collect();
        let refine = RefineParams::init(c, cfg.out_channels, &mut rng);
        AttentionParams { levels, refine }
    }

    pub fn zeros(cfg: &AttentionConfig) -> Self {
        let c = cfg.channels;
        AttentionParams {
            levels: (0..LEVELS)
                .map(|_| LevelParams {
                    lstm: ConvLstmParams::zeros(c, cfg.shared_gates),
                    gates: GateProjParams::zeros(c),
                    channel: ChannelAttnParams::zeros(c, cfg.reduction),
                    spatial: SpatialAttnParams::zeros(cfg.spatial_hidden),
                })
                .collect(),
            refine: RefineParams::zeros(c, cfg.out_channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.levels[0].lstm.channels()
    }

    pub fn out_channels(&self) -> usize {
        self.refine.out_channels()
    }

    pub fn zeros_like(&self) -> Self {
        zeros_like(self)
    }

    /// Checks that the parameter shapes are the ones `cfg` describes.
    pub fn matches(&self, cfg: &AttentionConfig) -> bool {
        let reference = AttentionParams::zeros(cfg);
        let a = self.named();
        let b = reference.named();
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|(x, y)| x.name == y.name && x.shape == y.shape)
    }

    /// Writes a RAFT checkpoint with a manifest carrying `cfg` and `meta`.
    pub fn save(
        &self,
        path: impl AsRef<Path>,
        cfg: &AttentionConfig,
        mut meta: serde_json::Map<String, serde_json::Value>,
    ) -> Result<()> {
        meta.insert("attention".into(), serde_json::to_value(cfg)?);
        let entries = self.named().into_iter().map(|s| (s.name, s.shape, s.data));
        raft::save_named(path, "attention", entries, meta)
    }

    /// Reads a checkpoint written by [`AttentionParams::save`].
    pub fn load(
        path: impl AsRef<Path>,
    ) -> Result<(
        Self,
        AttentionConfig,
        serde_json::Map<String, serde_json::Value>,
    )> {
        let (manifest, values) = raft::load_named(path.as_ref())?;
        if manifest.kind != "attention" {
            return Err(Error::Parse(format!(
                "checkpoint kind {:?} is not attention",
                manifest.kind
            )));
        }
        let cfg: AttentionConfig = manifest
            .meta
            .get("attention")
            .cloned()
            .map(serde_json::from_value)
            .transpose()?
            .ok_or_else(|| Error::Parse("checkpoint manifest lacks the attention config".into()))?;
        let mut params = AttentionParams::zeros(&cfg);
        assign_named(&mut params, &values)?;
        Ok((params, cfg, manifest.meta))
    }
}

impl Parameters for AttentionParams {
    fn slots<'a>(&'a self, prefix: &str, out: &mut Vec<ParamSlot<&'a [f64]>>) {
        self.levels.slots(&format!("{prefix}.levels"), out);
        self.refine.slots(&format!("{prefix}.refine"), out);
    }

    fn slots_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamSlot<&'a mut [f64]>>) {
        self.levels.slots_mut(&format!("{prefix}.levels"), out);
        self.refine.slots_mut(&format!("{prefix}.refine"), out);
    }
}

/// How the intra-frame gates are produced.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    #[default]
    Learned,
    /// Recurrent state still advances, but `Ψ^c` and `Ψ^s` are pinned to constants.
    Forced { channel: f64, spatial: f64 },
    /// Attention removed: gates are dropped from the residual formula, so each
    /// level contributes `φ + φ`, and the recurrent state is left untouched.
    Disabled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelState {
    pub lstm: ConvLstmState,
    /// Channel gate `h^c` of the most recent frame; `None` before the first.
    pub hc: Option<Tensor3>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionState {
    pub levels: Vec<LevelState>,
}

impl AttentionState {
    /// Zero hidden and cell state for `width × height × channels` levels.
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        AttentionState {
            levels: (0..LEVELS)
                .map(|_| LevelState {
                    lstm: ConvLstmState::zeros(width, height, channels),
                    hc: None,
                })
                .collect(),
        }
    }

    pub fn frame_index(&self) -> usize {
        self.levels[0].lstm.frame_index
    }
}

/// Per-level channel and spatial gates `(Ψ^c, Ψ^s)`.
pub type LevelGates = (Tensor3, Tensor3);

#[derive(Clone, Debug)]
pub struct AttentionOutput {
    /// Refined representation fed to the correlation filter.
    pub representation: Tensor3,
    /// Per-level reinforced maps `φ^a`.
    pub reinforced: Vec<Tensor3>,
    pub gates: Vec<LevelGates>,
    pub state: AttentionState,
}

#[derive(Clone, Debug)]
struct LevelCache {
    phi: Tensor3,
    psi_c: Tensor3,
    psi_s: Tensor3,
    first: bool,
    lstm: Option<lstm::LstmCache>,
    gates: Option<gates::GateCache>,
    channel: Option<channel::ChannelCache>,
    spatial: Option<spatial::SpatialCache>,
}

#[derive(Clone, Debug)]
pub struct AttentionCache {
    mode: AttentionMode,
    levels: Vec<LevelCache>,
    refine: refine::RefineCache,
}

/// Gradient with respect to a level's recurrent state.
#[derive(Clone, Debug)]
pub struct LevelStateGrad {
    pub d_h: Tensor3,
    pub d_c: Tensor3,
    pub d_hc: Option<Tensor3>,
}

#[derive(Clone, Debug)]
pub struct StateGrad {
    pub levels: Vec<LevelStateGrad>,
}

impl StateGrad {
    pub fn zeros(state: &AttentionState) -> Self {
        StateGrad {
            levels: state
                .levels
                .iter()
                .map(|l| LevelStateGrad {
                    d_h: Tensor3::zeros_like(&l.lstm.h),
                    d_c: Tensor3::zeros_like(&l.lstm.c),
                    d_hc: l.hc.as_ref().map(Tensor3::zeros_like),
                })
                .collect(),
        }
    }
}

fn check_levels(
    params: &AttentionParams,
    state: &AttentionState,
    levels: &[Tensor3],
) -> Result<()> {
    if levels.len() != LEVELS || state.levels.len() != LEVELS || params.levels.len() != LEVELS {
        return Err(Error::Config(format!(
            "attention needs {LEVELS} levels, got {} inputs / {} states / {} parameter sets",
            levels.len(),
            state.levels.len(),
            params.levels.len()
        )));
    }
    Ok(())
}

/// Runs the full hierarchy on one frame's pyramid.
pub fn attend(
    params: &AttentionParams,
    state: &AttentionState,
    levels: &[Tensor3],
    mode: AttentionMode,
) -> Result<AttentionOutput> {
    attend_forward(params, state, levels, mode).map(|(o, _)| o)
}

pub fn attend_forward(
    params: &AttentionParams,
    state: &AttentionState,
    levels: &[Tensor3],
    mode: AttentionMode,
) -> Result<(AttentionOutput, AttentionCache)> {
    check_levels(params, state, levels)?;
    let mut reinforced = Vec::with_capacity(LEVELS);
    let mut gate_out = Vec::with_capacity(LEVELS);
    let mut next = Vec::with_capacity(LEVELS);
    let mut caches = Vec::with_capacity(LEVELS);

    for ((phi, p), prev) in levels.iter().zip(&params.levels).zip(&state.levels) {
        let (w, h, c) = phi.shape();
        let first = prev.hc.is_none();
        let mut cache = LevelCache {
            phi: phi.clone(),
            psi_c: Tensor3::zeros(1, 1, c),
            psi_s: Tensor3::zeros(w, h, 1),
            first,
            lstm: None,
            gates: None,
            channel: None,
            spatial: None,
        };
        if mode == AttentionMode::Disabled {
            reinforced.push(phi.add(phi));
            gate_out.push((cache.psi_c.clone(), cache.psi_s.clone()));
            next.push(prev.clone());
            caches.push(cache);
            continue;
        }

        let (lstm_state, lstm_cache) = lstm::lstm_step_forward(&prev.lstm, phi, &p.lstm)?;
        let (proj, proj_cache) = gates::project_gates_forward(&lstm_state.h, &p.gates)?;
        let (psi_c, psi_s) = match mode {
            AttentionMode::Forced { channel, spatial } => (
                Tensor3::filled(1, 1, c, channel),
                Tensor3::filled(w, h, 1, spatial),
            ),
            _ => {
                let hc_prev = prev.hc.as_ref().unwrap_or(&proj.hc);
                let (psi_c, ccache) = channel::channel_attention_forward(phi, hc_prev, &p.channel)?;
                let (psi_s, scache) =
                    spatial::spatial_attention_forward(phi, &proj.hs, &p.spatial)?;
                cache.channel = Some(ccache);
                cache.spatial = Some(scache);
                (psi_c, psi_s)
            }
        };
        reinforced.push(reinforce::reinforce(phi, &psi_c, &psi_s)?);
        cache.psi_c = psi_c.clone();
        cache.psi_s = psi_s.clone();
        cache.lstm = Some(lstm_cache);
        cache.gates = Some(proj_cache);
        gate_out.push((psi_c, psi_s));
        next.push(LevelState {
            lstm: lstm_state,
            hc: Some(proj.hc),
        });
        caches.push(cache);
    }

    let (representation, refine_cache) = refine::refine_forward(&reinforced, &params.refine)?;
    Ok((
        AttentionOutput {
            representation,
            reinforced,
            gates: gate_out,
            state: AttentionState { levels: next },
        },
        AttentionCache {
            mode,
            levels: caches,
            refine: refine_cache,
        },
    ))
}

/// Reinforces and refines `levels` with externally supplied gates, bypassing
/// the recurrent and intra-frame branches.
pub fn apply_gates(
    params: &AttentionParams,
    levels: &[Tensor3],
    gates: &[LevelGates],
) -> Result<Tensor3> {
    if levels.len() != LEVELS || gates.len() != LEVELS {
        return Err(Error::Config(format!(
            "need {LEVELS} levels and gate pairs"
        )));
    }
    let reinforced = levels
        .iter()
        .zip(gates)
        .map(|(phi, (pc, ps))| reinforce::reinforce(phi, pc, ps))
        .collect::<Result<Vec<_>>>()?;
    refine::refine(&reinforced, &params.refine)
}

/// Back-propagates through one [`attend_forward`] call.
///
/// `d_repr` is the gradient on the refined representation and `d_next` the
/// gradient flowing back from later frames into the returned state. Parameter
/// gradients accumulate into `grad`. Returns the per-level input gradients and
/// the gradient on the incoming state.
pub fn attend_backward(
    cache: &AttentionCache,
    params: &AttentionParams,
    d_repr: &Tensor3,
    d_next: Option<&StateGrad>,
    grad: &mut AttentionParams,
) -> (Vec<Tensor3>, StateGrad) {
    let d_reinforced =
        refine::refine_backward(&cache.refine, &params.refine, d_repr, &mut grad.refine);
    let mut d_levels = Vec::with_capacity(LEVELS);
    let mut d_prev = Vec::with_capacity(LEVELS);

    for (li, (lc, d_out)) in cache.levels.iter().zip(d_reinforced.iter()).enumerate() {
        let p = &params.levels[li];
        let g = &mut grad.levels[li];
        let next_grad = d_next.map(|d| &d.levels[li]);

        if cache.mode == AttentionMode::Disabled {
            d_levels.push(d_out.scale(2.0));
            let pass = match next_grad {
                Some(n) => n.clone(),
                None => LevelStateGrad {
                    d_h: Tensor3::zeros_like(&lc.phi),
                    d_c: Tensor3::zeros_like(&lc.phi),
                    d_hc: if lc.first {
                        None
                    } else {
                        Some(Tensor3::zeros(1, 1, lc.phi.channels()))
                    },
                },
            };
            d_prev.push(pass);
            continue;
        }

        let (w, h, c) = lc.phi.shape();
        let (mut d_phi, d_psi_c, d_psi_s) =
            reinforce::reinforce_backward(&lc.phi, &lc.psi_c, &lc.psi_s, d_out);

        let mut d_hc_gate = next_grad
            .and_then(|n| n.d_hc.clone())
            .unwrap_or_else(|| Tensor3::zeros(1, 1, c));
        let mut d_hs = Tensor3::zeros(w, h, 1);
        let mut d_hc_prev = Tensor3::zeros(1, 1, c);
        if let (Some(cc), Some(sc)) = (&lc.channel, &lc.spatial) {
            let (dp, dhc) =
                channel::channel_attention_backward(cc, &p.channel, &d_psi_c, &mut g.channel);
            d_phi.add_assign(&dp);
            d_hc_prev = dhc;
            let (dp, dhs) =
                spatial::spatial_attention_backward(sc, &p.spatial, &d_psi_s, &mut g.spatial);
            d_phi.add_assign(&dp);
            d_hs = dhs;
        }
        if lc.first {
            // first frame reads its own channel gate
            d_hc_gate.add_assign(&d_hc_prev);
        }

        let gate_cache = lc
            .gates
            .as_ref()
            .expect("gate cache present when attention runs");
        let mut d_h =
            gates::project_gates_backward(gate_cache, &p.gates, &d_hc_gate, &d_hs, &mut g.gates);
        let d_c = match next_grad {
            Some(n) => {
                d_h.add_assign(&n.d_h);
                n.d_c.clone()
            }
            None => Tensor3::zeros(w, h, c),
        };
        let lstm_cache = lc
            .lstm
            .as_ref()
            .expect("lstm cache present when attention runs");
        let lg = lstm::lstm_step_backward(lstm_cache, &p.lstm, &d_h, &d_c, &mut g.lstm);
        d_phi.add_assign(&lg.d_phi);
        d_levels.push(d_phi);
        d_prev.push(LevelStateGrad {
            d_h: lg.d_h_prev,
            d_c: lg.d_c_prev,
            d_hc: if lc.first { None } else { Some(d_hc_prev) },
        });
    }
    (d_levels, StateGrad { levels: d_prev })
}
