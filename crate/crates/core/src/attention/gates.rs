//! Projection of the hidden state onto channel (`h^c`) and spatial (`h^s`) gates.

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{pool, pool_backward, sigmoid, Conv2d, PoolAxis, PoolKind, Tensor3};
use crate::params::{ParamSlot, Parameters};

/// `h^c = σ(W_hc · GAP(h))`, a 1×1 convolution `C → C` on the pooled state;
/// `h^s = σ(W_hs * h)`, a 1×1 convolution `C → 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct GateProjParams {
    pub channel: Conv2d,
    pub spatial: Conv2d,
}

impl GateProjParams {
    pub fn zeros(channels: usize) -> Self {
        GateProjParams {
            channel: Conv2d::zeros(channels, channels, 1).expect("odd kernel"),
            spatial: Conv2d::zeros(channels, 1, 1).expect("odd kernel"),
        }
    }

    pub fn init<R: Rng>(channels: usize, rng: &mut R) -> Self {
        GateProjParams {
            channel: Conv2d::glorot(channels, channels, 1, rng).expect("odd kernel"),
            spatial: Conv2d::glorot(channels, 1, 1, rng).expect("odd kernel"),
        }
    }
}

impl Parameters for GateProjParams {
    fn slots<'a>(&'a self, prefix: &str, out: &mut Vec<ParamSlot<&'a [f64]>>) {
        self.channel.slots(&format!("{prefix}.channel"), out);
        self.spatial.slots(&format!("{prefix}.spatial"), out);
    }

    fn slots_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamSlot<&'a mut [f64]>>) {
        self.channel.slots_mut(&format!("{prefix}.channel"), out);
        self.spatial.slots_mut(&format!("{prefix}.spatial"), out);
    }
}

/// Channel gate `1×1×C` and spatial gate `W×H×1`, both in `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GateProjections {
    pub hc: Tensor3,
    pub hs: Tensor3,
}

#[derive(Clone, Debug)]
pub struct GateCache {
    h: Tensor3,
    pooled: Tensor3,
    out: GateProjections,
}

pub fn project_gates(h: &Tensor3, p: &GateProjParams) -> Result<GateProjections> {
    project_gates_forward(h, p).map(|(g, _)| g)
}

pub fn project_gates_forward(
    h: &Tensor3,
    p: &GateProjParams,
) -> Result<(GateProjections, GateCache)> {
    if h.channels() != p.channel.in_channels() {
        return Err(Error::Dimension(format!(
            "gate projection expects {} channels, state has {}",
            p.channel.in_channels(),
            h.channels()
        )));
    }
    let pooled = pool(h, PoolAxis::Spatial, PoolKind::Avg);
    let hc = p.channel.forward(&pooled)?.map(sigmoid);
    let hs = p.spatial.forward(h)?.map(sigmoid);
    let out = GateProjections { hc, hs };
    let cache = GateCache {
        h: h.clone(),
        pooled,
        out: out.clone(),
    };
    Ok((out, cache))
}

/// Returns `∂L/∂h` given gradients on both projections.
pub fn project_gates_backward(
    cache: &GateCache,
    p: &GateProjParams,
    d_hc: &Tensor3,
    d_hs: &Tensor3,
    grad: &mut GateProjParams,
) -> Tensor3 {
    let d_hc_pre = d_hc.zip_map(&cache.out.hc, |d, s| d * s * (1.0 - s));
    let d_hs_pre = d_hs.zip_map(&cache.out.hs, |d, s| d * s * (1.0 - s));
    let d_pooled = p
        .channel
        .backward(&cache.pooled, &d_hc_pre, &mut grad.channel);
    let mut d_h = pool_backward(&cache.h, PoolAxis::Spatial, PoolKind::Avg, &d_pooled);
    d_h.add_assign(&p.spatial.backward(&cache.h, &d_hs_pre, &mut grad.spatial));
    d_h
}
