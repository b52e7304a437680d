//! Central finite-difference verification of every hand-written backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::correlation;
use super::graph::{pair_backward, pair_forward, GraphConfig, TrainingPair};
use crate::attention::{
    channel, gates, lstm, refine, reinforce, spatial, AttentionConfig, AttentionParams,
    ChannelAttnParams, ConvLstmParams, ConvLstmState, GateProjParams, RefineParams,
    SpatialAttnParams,
};
use crate::dcf::ContextSet;
use crate::error::Result;
use crate::geometry::Rect;
use crate::math::{gaussian_label, Tensor3};
use crate::params::{zeros_like, Parameters};

/// Tolerance for isolated modules.
pub const MODULE_TOL: f64 = 1e-4;
/// Tolerance for the end-to-end pair graph.
pub const GRAPH_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupCheck {
    pub module: String,
    pub name: String,
    pub count: usize,
    pub rel_error: f64,
    pub tolerance: f64,
}

impl GroupCheck {
    pub fn passed(&self) -> bool {
        self.rel_error < self.tolerance
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GradcheckReport {
    pub groups: Vec<GroupCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(GroupCheck::passed)
    }

    pub fn worst(&self, module_prefix: &str) -> f64 {
        self.groups
            .iter()
            .filter(|g| g.module.starts_with(module_prefix))
            .map(|g| g.rel_error)
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub size: usize,
    pub channels: usize,
    pub step: f64,
    /// Multiplies analytic gradients by `1 + perturb` before comparison.
    pub perturb: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            seed: 0,
            size: 8,
            channels: 2,
            step: 1e-4,
            perturb: 0.0,
        }
    }
}

/// `‖a − n‖ / max(‖a‖, ‖n‖, 1e-12)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied())
        .max(norm(&mut numeric.iter().copied()))
        .max(1e-12);
    diff / scale
}

/// Five-point central difference `(8(f₊₁ − f₋₁) − (f₊₂ − f₋₂)) / 12h`, where
/// `at(δ)` evaluates the function shifted by `δ`. Truncation error is O(h⁴).
pub fn central_difference(mut at: impl FnMut(f64) -> f64, h: f64) -> f64 {
    (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h)
}

/// Central differences of `f` with respect to every entry of `t`.
pub fn numeric_tensor_grad(t: &Tensor3, h: f64, f: impl Fn(&Tensor3) -> f64 + Sync) -> Tensor3 {
    let data: Vec<f64> = (0..t.len())
        .into_par_iter()
        .map(|i| {
            let mut p = t.clone();
            central_difference(
                |d| {
                    p.data_mut()[i] = t.data()[i] + d;
                    f(&p)
                },
                h,
            )
        })
        .collect();
    Tensor3::from_vec(t.width(), t.height(), t.channels(), data).expect("shape preserved")
}

/// Central differences of `f` with respect to every parameter, slot by slot.
pub fn numeric_param_grad<P>(p: &P, h: f64, f: impl Fn(&P) -> f64 + Sync) -> Vec<(String, Vec<f64>)>
where
    P: Parameters + Clone + Sync,
{
    let layout: Vec<(String, usize)> = p
        .named()
        .iter()
        .map(|s| (s.name.clone(), s.data.len()))
        .collect();
    let perturbed = |slot: usize, i: usize, delta: f64| {
        let mut q = p.clone();
        let mut slots = q.named_mut();
        slots[slot].data[i] += delta;
        drop(slots);
        f(&q)
    };
    layout
        .iter()
        .enumerate()
        .map(|(si, (name, len))| {
            let g: Vec<f64> = (0..*len)
                .into_par_iter()
                .map(|i| central_difference(|d| perturbed(si, i, d), h))
                .collect();
            (name.clone(), g)
        })
        .collect()
}

struct Checker<'a> {
    report: &'a mut GradcheckReport,
    opts: &'a GradcheckOptions,
}

impl Checker<'_> {
    fn push(&mut self, module: &str, name: &str, analytic: &[f64], numeric: &[f64], tol: f64) {
        let scaled: Vec<f64> = analytic
            .iter()
            .map(|a| a * (1.0 + self.opts.perturb))
            .collect();
        self.report.groups.push(GroupCheck {
            module: module.to_string(),
            name: name.to_string(),
            count: analytic.len(),
            rel_error: relative_error(&scaled, numeric),
            tolerance: tol,
        });
    }

    fn params<P: Parameters + Clone + Sync>(
        &mut self,
        module: &str,
        p: &P,
        analytic: &P,
        tol: f64,
        f: impl Fn(&P) -> f64 + Sync,
    ) {
        let numeric = numeric_param_grad(p, self.opts.step, f);
        for (a, (name, n)) in analytic.named().iter().zip(&numeric) {
            self.push(module, name, a.data, n, tol);
        }
    }

    fn tensor(
        &mut self,
        module: &str,
        name: &str,
        t: &Tensor3,
        analytic: &Tensor3,
        f: impl Fn(&Tensor3) -> f64 + Sync,
    ) {
        let numeric = numeric_tensor_grad(t, self.opts.step, f);
        self.push(module, name, analytic.data(), numeric.data(), MODULE_TOL);
    }
}

fn random(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize, lo: f64, hi: f64) -> Tensor3 {
    Tensor3::from_fn(w, h, c, |_, _, _| rng.gen_range(lo..hi))
}

/// Per-module checks on isolated building blocks with random linear read-outs.
pub fn check_modules(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (s, c) = (opts.size, opts.channels);
    let mut report = GradcheckReport::default();
    let mut ck = Checker {
        report: &mut report,
        opts,
    };

    // conv-LSTM step
    {
        let p = ConvLstmParams::init(c, false, 1.0, &mut rng);
        let prev = ConvLstmState {
            h: random(&mut rng, s, s, c, -0.5, 0.5),
            c: random(&mut rng, s, s, c, -1.0, 1.0),
            frame_index: 3,
        };
        let phi = random(&mut rng, s, s, c, -1.0, 1.0);
        let (wh, wc) = (
            random(&mut rng, s, s, c, -1.0, 1.0),
            random(&mut rng, s, s, c, -1.0, 1.0),
        );
        let loss = |prev: &ConvLstmState, phi: &Tensor3, p: &ConvLstmParams| {
            let st = lstm::lstm_step(prev, phi, p).expect("valid shapes");
            st.h.dot(&wh) + st.c.dot(&wc)
        };
        let (_, cache) = lstm::lstm_step_forward(&prev, &phi, &p)?;
        let mut grad = zeros_like(&p);
        let g = lstm::lstm_step_backward(&cache, &p, &wh, &wc, &mut grad);
        ck.params("lstm", &p, &grad, MODULE_TOL, |q| loss(&prev, &phi, q));
        ck.tensor("lstm", "d_phi", &phi, &g.d_phi, |t| loss(&prev, t, &p));
        ck.tensor("lstm", "d_h_prev", &prev.h, &g.d_h_prev, |t| {
            loss(
                &ConvLstmState {
                    h: t.clone(),
                    ..prev.clone()
                },
                &phi,
                &p,
            )
        });
        ck.tensor("lstm", "d_c_prev", &prev.c, &g.d_c_prev, |t| {
            loss(
                &ConvLstmState {
                    c: t.clone(),
                    ..prev.clone()
                },
                &phi,
                &p,
            )
        });

        let shared = ConvLstmParams::init(c, true, 1.0, &mut rng);
        let (_, cache) = lstm::lstm_step_forward(&prev, &phi, &shared)?;
        let mut grad = zeros_like(&shared);
        lstm::lstm_step_backward(&cache, &shared, &wh, &wc, &mut grad);
        ck.params("lstm-shared", &shared, &grad, MODULE_TOL, |q| {
            loss(&prev, &phi, q)
        });
    }

    // gate projections
    {
        let p = GateProjParams::init(c, &mut rng);
        let h = random(&mut rng, s, s, c, -1.0, 1.0);
        let (ac, as_) = (
            random(&mut rng, 1, 1, c, -1.0, 1.0),
            random(&mut rng, s, s, 1, -1.0, 1.0),
        );
        let loss = |h: &Tensor3, p: &GateProjParams| {
            let g = gates::project_gates(h, p).expect("valid shapes");
            g.hc.dot(&ac) + g.hs.dot(&as_)
        };
        let (_, cache) = gates::project_gates_forward(&h, &p)?;
        let mut grad = zeros_like(&p);
        let d_h = gates::project_gates_backward(&cache, &p, &ac, &as_, &mut grad);
        ck.params("gates", &p, &grad, MODULE_TOL, |q| loss(&h, q));
        ck.tensor("gates", "d_h", &h, &d_h, |t| loss(t, &p));
    }

    // channel attention
    {
        let p = ChannelAttnParams::init(c, 4, &mut rng);
        let phi = random(&mut rng, s, s, c, -1.0, 1.0);
        let hc = random(&mut rng, 1, 1, c, 0.0, 1.0);
        let a = random(&mut rng, 1, 1, c, -1.0, 1.0);
        let loss = |phi: &Tensor3, hc: &Tensor3, p: &ChannelAttnParams| {
            channel::channel_attention(phi, hc, p)
                .expect("valid shapes")
                .dot(&a)
        };
        let (_, cache) = channel::channel_attention_forward(&phi, &hc, &p)?;
        let mut grad = zeros_like(&p);
        let (d_phi, d_hc) = channel::channel_attention_backward(&cache, &p, &a, &mut grad);
        ck.params("channel", &p, &grad, MODULE_TOL, |q| loss(&phi, &hc, q));
        ck.tensor("channel", "d_phi", &phi, &d_phi, |t| loss(t, &hc, &p));
        ck.tensor("channel", "d_hc_prev", &hc, &d_hc, |t| loss(&phi, t, &p));
    }

    // spatial attention
    {
        let p = SpatialAttnParams::init(4, &mut rng);
        let phi = random(&mut rng, s, s, c, -1.0, 1.0);
        let hs = random(&mut rng, s, s, 1, 0.0, 1.0);
        let a = random(&mut rng, s, s, 1, -1.0, 1.0);
        let loss = |phi: &Tensor3, hs: &Tensor3, p: &SpatialAttnParams| {
            spatial::spatial_attention(phi, hs, p)
                .expect("valid shapes")
                .dot(&a)
        };
        let (_, cache) = spatial::spatial_attention_forward(&phi, &hs, &p)?;
        let mut grad = zeros_like(&p);
        let (d_phi, d_hs) = spatial::spatial_attention_backward(&cache, &p, &a, &mut grad);
        ck.params("spatial", &p, &grad, MODULE_TOL, |q| loss(&phi, &hs, q));
        ck.tensor("spatial", "d_phi", &phi, &d_phi, |t| loss(t, &hs, &p));
        ck.tensor("spatial", "d_hs", &hs, &d_hs, |t| loss(&phi, t, &p));
    }

    // residual reinforcement
    {
        let phi = random(&mut rng, s, s, c, -1.0, 1.0);
        let pc = random(&mut rng, 1, 1, c, 0.0, 1.0);
        let ps = random(&mut rng, s, s, 1, 0.0, 1.0);
        let a = random(&mut rng, s, s, c, -1.0, 1.0);
        let loss = |phi: &Tensor3, pc: &Tensor3, ps: &Tensor3| {
            reinforce::reinforce(phi, pc, ps)
                .expect("valid shapes")
                .dot(&a)
        };
        let (d_phi, d_c, d_s) = reinforce::reinforce_backward(&phi, &pc, &ps, &a);
        ck.tensor("reinforce", "d_phi", &phi, &d_phi, |t| loss(t, &pc, &ps));
        ck.tensor("reinforce", "d_psi_c", &pc, &d_c, |t| loss(&phi, t, &ps));
        ck.tensor("reinforce", "d_psi_s", &ps, &d_s, |t| loss(&phi, &pc, t));
    }

    // refinement
    {
        let p = RefineParams::init(c, c, &mut rng);
        let levels: Vec<Tensor3> = (0..3)
            .map(|_| random(&mut rng, s, s, c, -1.0, 1.0))
            .collect();
        let a = random(&mut rng, s, s, c, -1.0, 1.0);
        let loss = |levels: &[Tensor3], p: &RefineParams| {
            refine::refine(levels, p).expect("valid shapes").dot(&a)
        };
        let (_, cache) = refine::refine_forward(&levels, &p)?;
        let mut grad = zeros_like(&p);
        let d = refine::refine_backward(&cache, &p, &a, &mut grad);
        ck.params("refine", &p, &grad, MODULE_TOL, |q| loss(&levels, q));
        for (li, d_l) in d.iter().enumerate() {
            ck.tensor("refine", &format!("d_level{li}"), &levels[li], d_l, |t| {
                let mut l = levels.clone();
                l[li] = t.clone();
                loss(&l, &p)
            });
        }
    }

    // correlation layer, one and four context patches
    for k in [1, 4] {
        let cs = ContextSet::new(
            random(&mut rng, s, s, c, -1.0, 1.0),
            (0..k)
                .map(|_| random(&mut rng, s, s, c, -1.0, 1.0))
                .collect(),
        )?;
        let x = random(&mut rng, s, s, c, -1.0, 1.0);
        let y = gaussian_label(s, s, 1.0, (1.0, 0.0))?;
        let (l1, l2) = (1e-4, 0.1);
        let loss = |cs: &ContextSet, x: &Tensor3| {
            correlation::forward_loss(cs, x, &y, l1, l2)
                .expect("valid shapes")
                .0
        };
        let (_, cache) = correlation::forward_loss(&cs, &x, &y, l1, l2)?;
        let g = correlation::backward(&cache)?;
        let module = format!("correlation-k{k}");
        ck.tensor(&module, "d_x", &x, &g.d_x, |t| loss(&cs, t));
        ck.tensor(&module, "d_z0", &cs.target, &g.d_z0, |t| {
            loss(
                &ContextSet {
                    target: t.clone(),
                    contexts: cs.contexts.clone(),
                },
                &x,
            )
        });
        for (i, d) in g.d_zi.iter().enumerate() {
            ck.tensor(&module, &format!("d_z{}", i + 1), &cs.contexts[i], d, |t| {
                let mut ctx = cs.contexts.clone();
                ctx[i] = t.clone();
                loss(
                    &ContextSet {
                        target: cs.target.clone(),
                        contexts: ctx,
                    },
                    &x,
                )
            });
        }
    }
    Ok(report)
}

/// A random but well-conditioned pair at `size × size × channels`.
pub fn random_pair(rng: &mut ChaCha8Rng, size: usize, channels: usize) -> Result<TrainingPair> {
    let level = |rng: &mut ChaCha8Rng| random(rng, size, size, channels, -1.0, 1.0);
    let template = (0..3).map(|_| level(rng)).collect();
    let search = (0..3).map(|_| level(rng)).collect();
    let half = size as f64 / 2.0;
    Ok(TrainingPair {
        template,
        search,
        label: gaussian_label(size, size, 1.0, (1.0, 0.0))?,
        target: Rect::from_center(half, half, size as f64 / 4.0, size as f64 / 4.0),
    })
}

/// Full-graph check: every attention, LSTM and refinement parameter through
/// two attended frames, the context set and the correlation loss.
pub fn check_graph(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9);
    let params = AttentionParams::init(&AttentionConfig {
        channels: opts.channels,
        out_channels: opts.channels,
        seed: opts.seed,
        ..AttentionConfig::default()
    });
    let pair = random_pair(&mut rng, opts.size, opts.channels)?;
    let cfg = GraphConfig::default();
    let (_, cache) = pair_forward(&params, &pair, &cfg)?;
    let grads = pair_backward(&params, &cache)?;
    let mut report = GradcheckReport::default();
    let mut ck = Checker {
        report: &mut report,
        opts,
    };
    ck.params("graph", &params, &grads.d_params, GRAPH_TOL, |q| {
        pair_forward(q, &pair, &cfg).expect("valid pair").0
    });
    Ok(report)
}

/// Module checks followed by the full graph.
pub fn run_all(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut report = check_modules(opts)?;
    report.groups.extend(check_graph(opts)?.groups);
    Ok(report)
}
