//! Channel-wise intra-frame attention `Ψ^c`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{pool, pool_backward, sigmoid, Conv2d, PoolAxis, PoolKind, Tensor3};
use crate::params::{ParamSlot, Parameters};

/// Bottleneck MLP on `1×1×C` descriptors, realized as 1×1 convolutions.
///
/// `descriptor: C → b`, `hidden: C → b`, `output: b → C`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAttnParams {
    pub descriptor: Conv2d,
    pub hidden: Conv2d,
    pub output: Conv2d,
}

/// Bottleneck width `max(C / r, 4)`.
pub fn bottleneck(channels: usize, reduction: usize) -> usize {
    (channels / reduction.max(1)).max(4)
}

impl ChannelAttnParams {
    pub fn zeros(channels: usize, reduction: usize) -> Self {
        let b = bottleneck(channels, reduction);
        ChannelAttnParams {
            descriptor: Conv2d::zeros(channels, b, 1).expect("odd kernel"),
            hidden: Conv2d::zeros(channels, b, 1).expect("odd kernel"),
            output: Conv2d::zeros(b, channels, 1).expect("odd kernel"),
        }
    }

    pub fn init<R: Rng>(channels: usize, reduction: usize, rng: &mut R) -> Self {
        let b = bottleneck(channels, reduction);
        ChannelAttnParams {
            descriptor: Conv2d::glorot(channels, b, 1, rng).expect("odd kernel"),
            hidden: Conv2d::glorot(channels, b, 1, rng).expect("odd kernel"),
            output: Conv2d::glorot(b, channels, 1, rng).expect("odd kernel"),
        }
    }

    pub fn channels(&self) -> usize {
        self.descriptor.in_channels()
    }
}

impl Parameters for ChannelAttnParams {
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
pub struct ChannelCache {
    phi: Tensor3,
    descriptor: Tensor3,
    hc_prev: Tensor3,
    theta: Tensor3,
    psi: Tensor3,
}

/// `Φ^c = AvgPool(φ) + MaxPool(φ)`, `Θ^c = tanh(W_Φ Φ^c + W_h h^c_{t-1})`,
/// `Ψ^c = σ(W_o Θ^c)`.
pub fn channel_attention(
    phi: &Tensor3,
    hc_prev: &Tensor3,
    p: &ChannelAttnParams,
) -> Result<Tensor3> {
    channel_attention_forward(phi, hc_prev, p).map(|(psi, _)| psi)
}

pub fn channel_attention_forward(
    phi: &Tensor3,
    hc_prev: &Tensor3,
    p: &ChannelAttnParams,
) -> Result<(Tensor3, ChannelCache)> {
    let c = p.channels();
    if phi.channels() != c || hc_prev.shape() != (1, 1, c) {
        return Err(Error::Dimension(format!(
            "channel attention expects {c} channels and a 1x1x{c} gate, got {:?} and {:?}",
            phi.shape(),
            hc_prev.shape()
        )));
    }
    let descriptor = pool(phi, PoolAxis::Spatial, PoolKind::Avg).add(&pool(
        phi,
        PoolAxis::Spatial,
        PoolKind::Max,
    ));
    let mut pre = p.descriptor.forward(&descriptor)?;
    pre.add_assign(&p.hidden.forward(hc_prev)?);
    let theta = pre.map(f64::tanh);
    let psi = p.output.forward(&theta)?.map(sigmoid);
    let cache = ChannelCache {
        phi: phi.clone(),
        descriptor,
        hc_prev: hc_prev.clone(),
        theta,
        psi: psi.clone(),
    };
    Ok((psi, cache))
}

/// Returns `(∂L/∂φ, ∂L/∂h^c_{t-1})`.
pub fn channel_attention_backward(
    cache: &ChannelCache,
    p: &ChannelAttnParams,
    d_psi: &Tensor3,
    grad: &mut ChannelAttnParams,
) -> (Tensor3, Tensor3) {
    let d_out_pre = d_psi.zip_map(&cache.psi, |d, s| d * s * (1.0 - s));
    let d_theta = p
        .output
        .backward(&cache.theta, &d_out_pre, &mut grad.output);
    let d_pre = d_theta.zip_map(&cache.theta, |d, t| d * (1.0 - t * t));
    let d_desc = p
        .descriptor
        .backward(&cache.descriptor, &d_pre, &mut grad.descriptor);
    let d_hc = p.hidden.backward(&cache.hc_prev, &d_pre, &mut grad.hidden);
    let mut d_phi = pool_backward(&cache.phi, PoolAxis::Spatial, PoolKind::Avg, &d_desc);
    d_phi.add_assign(&pool_backward(
        &cache.phi,
        PoolAxis::Spatial,
        PoolKind::Max,
        &d_desc,
    ));
    (d_phi, d_hc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_half() {
        let p = ChannelAttnParams::zeros(8, 4);
        let phi = Tensor3::from_fn(4, 4, 8, |x, y, c| (x + y * c) as f64);
        let psi = channel_attention(&phi, &Tensor3::filled(1, 1, 8, 0.3), &p).unwrap();
        assert_eq!(psi.shape(), (1, 1, 8));
        assert!(psi.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn constant_input_descriptor_is_twice_value() {
        let p = ChannelAttnParams::zeros(3, 4);
        let phi = Tensor3::filled(5, 5, 3, 1.25);
        let (_, cache) = channel_attention_forward(&phi, &Tensor3::zeros(1, 1, 3), &p).unwrap();
        assert!(cache.descriptor.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn bottleneck_floor() {
        assert_eq!(bottleneck(8, 4), 4);
        assert_eq!(bottleneck(2, 4), 4);
        assert_eq!(bottleneck(64, 4), 16);
    }

    #[test]
    fn channel_mismatch() {
        let p = ChannelAttnParams::zeros(3, 4);
        assert!(matches!(
            channel_attention(&Tensor3::zeros(2, 2, 4), &Tensor3::zeros(1, 1, 3), &p),
            Err(Error::Dimension(_))
        ));
    }
}
