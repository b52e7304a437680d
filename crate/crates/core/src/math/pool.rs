use serde::{Deserialize, Serialize};

use super::tensor::Tensor3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolAxis {
    /// Reduce over all sites, keeping channels: `W×H×C → 1×1×C`.
    Spatial,
    /// Reduce over channels at each site: `W×H×C → W×H×1`.
    Channel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolKind {
    Avg,
    Max,
}

/// Global average or max pooling along one axis.
pub fn pool(t: &Tensor3, axis: PoolAxis, kind: PoolKind) -> Tensor3 {
    let (w, h, c) = t.shape();
    match axis {
        PoolAxis::Spatial => {
            let mut out = match kind {
                PoolKind::Avg => Tensor3::zeros(1, 1, c),
                PoolKind::Max => Tensor3::filled(1, 1, c, f64::NEG_INFINITY),
            };
            let acc = out.data_mut();
            for site in t.data().chunks_exact(c) {
                for (a, &v) in acc.iter_mut().zip(site) {
                    match kind {
                        PoolKind::Avg => *a += v,
                        PoolKind::Max => *a = a.max(v),
                    }
                }
            }
            if kind == PoolKind::Avg {
                let n = (w * h) as f64;
                for a in acc.iter_mut() {
                    *a /= n;
                }
            }
            out
        }
        PoolAxis::Channel => {
            let data = t
                .data()
                .chunks_exact(c)
                .map(|site| match kind {
                    PoolKind::Avg => site.iter().sum::<f64>() / c as f64,
                    PoolKind::Max => site.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                })
                .collect();
            Tensor3::from_vec(w, h, 1, data).expect("pooled shape")
        }
    }
}

/// Gradient of [`pool`] with respect to its input. Max pooling routes the
/// gradient to the first maximal element in storage order.
pub fn pool_backward(input: &Tensor3, axis: PoolAxis, kind: PoolKind, d_out: &Tensor3) -> Tensor3 {
    let (w, h, c) = input.shape();
    let mut d_in = Tensor3::zeros_like(input);
    match (axis, kind) {
        (PoolAxis::Spatial, PoolKind::Avg) => {
            let n = (w * h) as f64;
            for d in d_in.data_mut().chunks_exact_mut(c) {
                for (g, &go) in d.iter_mut().zip(d_out.data()) {
                    *g = go / n;
                }
            }
        }
        (PoolAxis::Spatial, PoolKind::Max) => {
            for ch in 0..c {
                let mut best = 0;
                for site in 1..w * h {
                    if input.data()[site * c + ch] > input.data()[best * c + ch] {
                        best = site;
                    }
                }
                d_in.data_mut()[best * c + ch] = d_out.data()[ch];
            }
        }
        (PoolAxis::Channel, PoolKind::Avg) => {
            for (site, d) in d_in.data_mut().chunks_exact_mut(c).enumerate() {
                let g = d_out.data()[site] / c as f64;
                d.iter_mut().for_each(|v| *v = g);
            }
        }
        (PoolAxis::Channel, PoolKind::Max) => {
            for (site, (d, x)) in d_in
                .data_mut()
                .chunks_exact_mut(c)
                .zip(input.data().chunks_exact(c))
                .enumerate()
            {
                let mut best = 0;
                for ch in 1..c {
                    if x[ch] > x[best] {
                        best = ch;
                    }
                }
                d[best] = d_out.data()[site];
            }
        }
    }
    d_in
}
