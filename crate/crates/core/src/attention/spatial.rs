//! Spatial intra-frame attention `Ψ^s`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{pool, pool_backward, sigmoid, Conv2d, PoolAxis, PoolKind, Tensor3};
use crate::params::{ParamSlot, Parameters};

/// Per-site MLP over the `W×H×1` descriptor plane as 1×1 convolutions:
/// `descriptor: 1 → b`, `hidden: 1 → b`, `output: b → 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialAttnParams {
    pub descriptor: Conv2d,
    pub hidden: Conv2d,
    pub output: Conv2d,
}

impl SpatialAttnParams {
    pub fn zeros(width: usize) -> Self {
        SpatialAttnParams {
            descriptor: Conv2d::zeros(1, width, 1).expect("odd kernel"),
            hidden: Conv2d::zeros(1, width, 1).expect("odd kernel"),
            output: Conv2d::zeros(width, 1, 1).expect("odd kernel"),
        }
    }

    pub fn init<R: Rng>(width: usize, rng: &mut R) -> Self {
        SpatialAttnParams {
            descriptor: Conv2d::glorot(1, width, 1, rng).expect("odd kernel"),
            hidden: Conv2d::glorot(1, width, 1, rng).expect("odd kernel"),
            output: Conv2d::glorot(width, 1, 1, rng).expect("odd kernel"),
        }
    }
}

impl Parameters for SpatialAttnParams {
    fn slots<'a>(&'a self, prefix: &str, out: &mut Vec<ParamSlot<&'a [f64]>>) {
        self.descriptor.slots(&format!("{prefix}.descriptor"), out);
        self.hidden.slots(&format!("{prefix}.hidden"), out);
        self.output.slots(&format!("{prefix}.output"), out);
    }

    fn slots_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamSlot<&'a mut [f64]>>) {
        self.descriptor
            .slots_mut(&format!("{prefix}.descriptor"), out);
        self.hidden.slots_mut(&format!("{prefix}.hidden"), out);
        self.output.slots_mut(&format!("{prefix}.output"), out);
    }
}

#[derive(Clone, Debug)]
pub struct SpatialCache {
    phi: Tensor3,
    descriptor: Tensor3,
    hs: Tensor3,
    theta: Tensor3,
    psi: Tensor3,
}

/// `Φ^s = AvgPool_ch(φ) + MaxPool_ch(φ)`, `Θ^s = tanh(W_Φ Φ^s + W_h h^s_t)`,
/// `Ψ^s = σ(W_o Θ^s)`.
pub fn spatial_attention(
    phi: &Tensor3,
    hs_curr: &Tensor3,
    p: &SpatialAttnParams,
) -> Result<Tensor3> {
    spatial_attention_forward(phi, hs_curr, p).map(|(psi, _)| psi)
}

/// Channel-pooled descriptor plane `AvgPool + MaxPool`.
pub fn spatial_descriptor(phi: &Tensor3) -> Tensor3 {
    pool(phi, PoolAxis::Channel, PoolKind::Avg).add(&pool(phi, PoolAxis::Channel, PoolKind::Max))
}

pub fn spatial_attention_forward(
    phi: &Tensor3,
    hs_curr: &Tensor3,
    p: &SpatialAttnParams,
) -> Result<(Tensor3, SpatialCache)> {
    if hs_curr.shape() != (phi.width(), phi.height(), 1) {
        return Err(Error::Dimension(format!(
            "spatial gate {:?} does not cover feature map {:?}",
            hs_curr.shape(),
            phi.shape()
        )));
    }
    let descriptor = spatial_descriptor(phi);
    let mut pre = p.descriptor.forward(&descriptor)?;
    pre.add_assign(&p.hidden.forward(hs_curr)?);
    let theta = pre.map(f64::tanh);
    let psi = p.output.forward(&theta)?.map(sigmoid);
    let cache = SpatialCache {
        phi: phi.clone(),
        descriptor,
        hs: hs_curr.clone(),
        theta,
        psi: psi.clone(),
    };
    Ok((psi, cache))
}

/// Returns `(∂L/∂φ, ∂L/∂h^s_t)`.
pub fn spatial_attention_backward(
    cache: &SpatialCache,
    p: &SpatialAttnParams,
    d_psi: &Tensor3,
    grad: &mut SpatialAttnParams,
) -> (Tensor3, Tensor3) {
    let d_out_pre = d_psi.zip_map(&cache.psi, |d, s| d * s * (1.0 - s));
    let d_theta = p
        .output
        .backward(&cache.theta, &d_out_pre, &mut grad.output);
    let d_pre = d_theta.zip_map(&cache.theta, |d, t| d * (1.0 - t * t));
    let d_desc = p
        .descriptor
        .backward(&cache.descriptor, &d_pre, &mut grad.descriptor);
    let d_hs = p.hidden.backward(&cache.hs, &d_pre, &mut grad.hidden);
    let mut d_phi = pool_backward(&cache.phi, PoolAxis::Channel, PoolKind::Avg, &d_desc);
    d_phi.add_assign(&pool_backward(
        &cache.phi,
        PoolAxis::Channel,
        PoolKind::Max,
        &d_desc,
    ));
    (d_phi, d_hs)
}
