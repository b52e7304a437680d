//! The training graph for one template/search pair.
//!
//! The template pyramid is attended from a zero recurrent state, the search
//! pyramid from the state the template left behind. The refined template map
//! yields the context set, the refined search map the probe, and the loss is
//! the squared error of the single-frame filter response.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::correlation::{self, CorrelationCache};
use crate::attention::{
    attend_backward, attend_forward, AttentionCache, AttentionMode, AttentionParams, AttentionState,
};
use crate::dcf::{context_set_backward, make_context_set};
use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::math::{hann_window, Tensor3};
use crate::params::Parameters;

/// Filter hyper-parameters used inside the training graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub contexts: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            lambda1: 1e-4,
            lambda2: 0.1,
            contexts: 4,
        }
    }
}

/// Feature pyramids, label and target box (in feature cells) of one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub template: Vec<Tensor3>,
    pub search: Vec<Tensor3>,
    pub label: Tensor3,
    pub target: Rect,
}

impl TrainingPair {
    pub fn plane_size(&self) -> (usize, usize) {
        (self.template[0].width(), self.template[0].height())
    }
}

/// Gradients of one pair's loss.
#[derive(Clone, Debug)]
pub struct GradientSet {
    /// `∂L/∂φ^a(x)` on the windowed probe.
    pub d_x: Tensor3,
    pub d_z0: Tensor3,
    pub d_zi: Vec<Tensor3>,
    pub d_params: AttentionParams,
}

impl GradientSet {
    /// Parameter gradients keyed by slot name.
    pub fn param_map(&self) -> BTreeMap<String, Vec<f64>> {
        self.d_params.to_map()
    }

    pub fn is_finite(&self) -> bool {
        self.d_params.flat().iter().all(|v| v.is_finite())
            && self.d_x.is_finite()
            && self.d_z0.is_finite()
            && self.d_zi.iter().all(Tensor3::is_finite)
    }
}

#[derive(Clone, Debug)]
pub struct GraphCache {
    template: AttentionCache,
    search: AttentionCache,
    correlation: CorrelationCache,
    window: Tensor3,
    target: Rect,
    plane: (usize, usize),
}

fn check_pair(params: &AttentionParams, pair: &TrainingPair) -> Result<()> {
    if pair.template.len() != 3 || pair.search.len() != 3 {
        return Err(Error::Dimension(
            "training pair needs 3-level pyramids".into(),
        ));
    }
    let c = params.channels();
    for t in pair.template.iter().chain(&pair.search) {
        t.ensure_same_shape(&pair.template[0], "pyramid level")?;
    }
    if pair.template[0].channels() != c {
        return Err(Error::Dimension(format!(
            "pair has {} channels, parameters expect {c}",
            pair.template[0].channels()
        )));
    }
    Ok(())
}

/// Loss of one pair plus everything needed for [`pair_backward`].
pub fn pair_forward(
    params: &AttentionParams,
    pair: &TrainingPair,
    cfg: &GraphConfig,
) -> Result<(f64, GraphCache)> {
    check_pair(params, pair)?;
    let (w, h) = pair.plane_size();
    let window = hann_window(w, h)?;
    let state = AttentionState::new(w, h, params.channels());
    let (z_out, z_cache) = attend_forward(params, &state, &pair.template, AttentionMode::Learned)?;
    let (x_out, x_cache) =
        attend_forward(params, &z_out.state, &pair.search, AttentionMode::Learned)?;
    let cs = make_context_set(&z_out.representation, &pair.target, cfg.contexts, &window)?;
    let x = x_out.representation.mul_plane(&window)?;
    let (loss, corr) = correlation::forward_loss(&cs, &x, &pair.label, cfg.lambda1, cfg.lambda2)?;
    Ok((
        loss,
        GraphCache {
            template: z_cache,
            search: x_cache,
            correlation: corr,
            window,
            target: pair.target,
            plane: (w, h),
        },
    ))
}

pub fn pair_loss(params: &AttentionParams, pair: &TrainingPair, cfg: &GraphConfig) -> Result<f64> {
    pair_forward(params, pair, cfg).map(|(l, _)| l)
}

/// Analytic gradients through the correlation layer, context extraction and
/// both attention passes.
pub fn pair_backward(params: &AttentionParams, cache: &GraphCache) -> Result<GradientSet> {
    let corr = correlation::backward(&cache.correlation)?;
    let mut d_params = params.zeros_like();
    let d_xrep = corr.d_x.mul_plane(&cache.window)?;
    let (_, d_state) = attend_backward(&cache.search, params, &d_xrep, None, &mut d_params);
    let d_zrep = context_set_backward(
        cache.plane,
        &cache.target,
        &cache.window,
        &corr.d_z0,
        &corr.d_zi,
    )?;
    attend_backward(
        &cache.template,
        params,
        &d_zrep,
        Some(&d_state),
        &mut d_params,
    );
    Ok(GradientSet {
        d_x: corr.d_x,
        d_z0: corr.d_z0,
        d_zi: corr.d_zi,
        d_params,
    })
}
