use rand::Rng;

use super::tensor::Tensor3;
use crate::error::{Error, Result};
use crate::params::{ParamSlot, Parameters};

/// Bank of odd-sized convolution kernels with per-output bias.
///
/// Weights are stored `[out][ky][kx][in]` so the innermost loop walks the
/// channel-last input contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    ksize: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, ksize: usize) -> Result<Self> {
        if ksize.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "kernel size must be odd, got {ksize}"
            )));
        }
        Ok(Conv2d {
            in_channels,
            out_channels,
            ksize,
            weight: vec![0.0; out_channels * ksize * ksize * in_channels],
            bias: vec![0.0; out_channels],
        })
    }

    pub fn from_parts(
        in_channels: usize,
        out_channels: usize,
        ksize: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let mut conv = Self::zeros(in_channels, out_channels, ksize)?;
        if weight.len() != conv.weight.len() || bias.len() != out_channels {
            return Err(Error::Dimension(format!(
                "conv {in_channels}->{out_channels} k{ksize}: expected {} weights and {} biases",
                conv.weight.len(),
                out_channels
            )));
        }
        conv.weight = weight;
        conv.bias = bias;
        Ok(conv)
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        ksize: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut conv = Self::zeros(in_channels, out_channels, ksize)?;
        let area = (ksize * ksize) as f64;
        let limit = (6.0 / (area * (in_channels + out_channels) as f64)).sqrt();
        for w in &mut conv.weight {
            *w = rng.gen_range(-limit..limit);
        }
        Ok(conv)
    }

    /// Centre-tap identity: output channel `o` copies input channel `o`.
    pub fn identity(channels: usize, ksize: usize) -> Result<Self> {
        let mut conv = Self::zeros(channels, channels, ksize)?;
        let r = ksize / 2;
        for o in 0..channels {
            let i = conv.weight_index(o, r, r, o);
            conv.weight[i] = 1.0;
        }
        Ok(conv)
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn ksize(&self) -> usize {
        self.ksize
    }

    #[inline]
    pub fn weight_index(&self, o: usize, ky: usize, kx: usize, i: usize) -> usize {
        ((o * self.ksize + ky) * self.ksize + kx) * self.in_channels + i
    }

    fn check_input(&self, t: &Tensor3) -> Result<()> {
        if t.channels() != self.in_channels {
            return Err(Error::Dimension(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                t.channels()
            )));
        }
        Ok(())
    }

    /// Zero-padded "same" cross-correlation.
    pub fn forward(&self, t: &Tensor3) -> Result<Tensor3> {
        self.check_input(t)?;
        let (w, h, cin) = t.shape();
        let (k, r, cout) = (self.ksize, self.ksize / 2, self.out_channels);
        let mut out = Tensor3::zeros(w, h, cout);
        let src = t.data();
        let dst = out.data_mut();
        for y in 0..h {
            for x in 0..w {
                let base = (y * w + x) * cout;
                dst[base..base + cout].copy_from_slice(&self.bias);
                for ky in 0..k {
                    let sy = y as isize + ky as isize - r as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let sx = x as isize + kx as isize - r as isize;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let s = (sy as usize * w + sx as usize) * cin;
                        let input = &src[s..s + cin];
                        for o in 0..cout {
                            let wi = self.weight_index(o, ky, kx, 0);
                            let kern = &self.weight[wi..wi + cin];
                            let acc: f64 = kern.iter().zip(input).map(|(a, b)| a * b).sum();
                            dst[base + o] += acc;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Accumulates weight/bias gradients into `grad` and returns the input gradient.
    pub fn backward(&self, input: &Tensor3, d_out: &Tensor3, grad: &mut Conv2d) -> Tensor3 {
        let (w, h, cin) = input.shape();
        let (k, r, cout) = (self.ksize, self.ksize / 2, self.out_channels);
        debug_assert_eq!(d_out.shape(), (w, h, cout));
        let mut d_in = Tensor3::zeros_like(input);
        let src = input.data();
        let go = d_out.data();
        for y in 0..h {
            for x in 0..w {
                let base = (y * w + x) * cout;
                for o in 0..cout {
                    grad.bias[o] += go[base + o];
                }
                for ky in 0..k {
                    let sy = y as isize + ky as isize - r as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let sx = x as isize + kx as isize - r as isize;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let s = (sy as usize * w + sx as usize) * cin;
                        for o in 0..cout {
                            let g = go[base + o];
                            if g == 0.0 {
                                continue;
                            }
                            let wi = self.weight_index(o, ky, kx, 0);
                            for i in 0..cin {
                                grad.weight[wi + i] += g * src[s + i];
                                d_in.data_mut()[s + i] += g * self.weight[wi + i];
                            }
                        }
                    }
                }
            }
        }
        d_in
    }
}

impl Parameters for Conv2d {
    fn slots<'a>(&'a self, prefix: &str, out: &mut Vec<ParamSlot<&'a [f64]>>) {
        out.push(ParamSlot::new(
            format!("{prefix}.weight"),
            vec![self.out_channels, self.ksize, self.ksize, self.in_channels],
            &self.weight,
        ));
        out.push(ParamSlot::new(
            format!("{prefix}.bias"),
            vec![self.out_channels],
            &self.bias,
        ));
    }

    fn slots_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamSlot<&'a mut [f64]>>) {
        let shape = vec![self.out_channels, self.ksize, self.ksize, self.in_channels];
        out.push(ParamSlot::new(
            format!("{prefix}.weight"),
            shape,
            &mut self.weight,
        ));
        out.push(ParamSlot::new(
            format!("{prefix}.bias"),
            vec![self.out_channels],
            &mut self.bias,
        ));
    }
}

/// Free-function form of [`Conv2d::forward`].
pub fn conv2d_same(t: &Tensor3, kernels: &Conv2d) -> Result<Tensor3> {
    kernels.forward(t)
}
