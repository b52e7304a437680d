//! Convolutional LSTM step producing the inter-frame attention `h_t`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{sigmoid, Conv2d, Tensor3};
use crate::params::{ParamSlot, Parameters};

/// Gate order inside the stacked pre-activation.
const FORGET: usize = 0;
const INPUT: usize = 1;
const OUTPUT: usize = 2;
const CONTENT: usize = 3;

/// 3×3 input-path and hidden-path kernels for the forget, input, output and
/// content gates.
///
/// With distinct gate weights each convolution maps `C → 4C` channels laid out
/// `[f | i | o | c̃]`. The shared variant uses a single `C → C` kernel whose
/// output feeds all four gates.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmParams {
    pub input: Conv2d,
    pub hidden: Conv2d,
    shared_gates: bool,
}

impl ConvLstmParams {
    pub fn zeros(channels: usize, shared_gates: bool) -> Self {
        let out = if shared_gates { channels } else { 4 * channels };
        ConvLstmParams {
            input: Conv2d::zeros(channels, out, 3).expect("odd kernel"),
            hidden: Conv2d::zeros(channels, out, 3).expect("odd kernel"),
            shared_gates,
        }
    }

    pub fn init<R: Rng>(
        channels: usize,
        shared_gates: bool,
        forget_bias: f64,
        rng: &mut R,
    ) -> Self {
        let out = if shared_gates { channels } else { 4 * channels };
        let mut input = Conv2d::glorot(channels, out, 3, rng).expect("odd kernel");
        let hidden = Conv2d::glorot(channels, out, 3, rng).expect("odd kernel");
        if !shared_gates {
            input.bias[FORGET * channels..(FORGET + 1) * channels].fill(forget_bias);
        }
        ConvLstmParams {
            input,
            hidden,
            shared_gates,
        }
    }

    pub fn channels(&self) -> usize {
        self.input.in_channels()
    }

    pub fn shared_gates(&self) -> bool {
        self.shared_gates
    }

    fn gate_offset(&self, gate: usize) -> usize {
        if self.shared_gates {
            0
        } else {
            gate * self.channels()
        }
    }
}

impl Parameters for ConvLstmParams {
    fn slots<'a>(&'a self, prefix: &str, out: &mut Vec<ParamSlot<&'a [f64]>>) {
        self.input.slots(&format!("{prefix}.input"), out);
        self.hidden.slots(&format!("{prefix}.hidden"), out);
    }

    fn slots_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamSlot<&'a mut [f64]>>) {
        self.input.slots_mut(&format!("{prefix}.input"), out);
        self.hidden.slots_mut(&format!("{prefix}.hidden"), out);
    }
}

/// Recurrent state of one hierarchy level.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmState {
    pub h: Tensor3,
    pub c: Tensor3,
    pub frame_index: usize,
}

impl ConvLstmState {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        ConvLstmState {
            h: Tensor3::zeros(width, height, channels),
            c: Tensor3::zeros(width, height, channels),
            frame_index: 0,
        }
    }
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LstmCache {
    prev: ConvLstmState,
    phi: Tensor3,
    /// `[f, i, o, c̃]`, each `W×H×C`.
    gates: [Tensor3; 4],
    tanh_c: Tensor3,
}

/// One conv-LSTM step:
/// `f,i,o = σ(W_h*h + W_i*φ)`, `c̃ = tanh(·)`, `c = f⊙c_prev + i⊙c̃`, `h = o⊙tanh(c)`.
pub fn lstm_step(prev: &ConvLstmState, phi: &Tensor3, p: &ConvLstmParams) -> Result<ConvLstmState> {
    lstm_step_forward(prev, phi, p).map(|(s, _)| s)
}

pub fn lstm_step_forward(
    prev: &ConvLstmState,
    phi: &Tensor3,
    p: &ConvLstmParams,
) -> Result<(ConvLstmState, LstmCache)> {
    phi.ensure_same_shape(&prev.h, "lstm input vs hidden state")?;
    phi.ensure_same_shape(&prev.c, "lstm input vs cell state")?;
    if phi.channels() != p.channels() {
        return Err(Error::Dimension(format!(
            "lstm params expect {} channels, input has {}",
            p.channels(),
            phi.channels()
        )));
    }
    let (w, h, c) = phi.shape();
    let mut pre = p.input.forward(phi)?;
    pre.add_assign(&p.hidden.forward(&prev.h)?);
    let pc = pre.channels();

    let mut gates: [Tensor3; 4] = std::array::from_fn(|_| Tensor3::zeros(w, h, c));
    for gate in 0..4 {
        let off = p.gate_offset(gate);
        let dst = gates[gate].data_mut();
        for (site, out) in dst.chunks_exact_mut(c).enumerate() {
            let src = &pre.data()[site * pc + off..site * pc + off + c];
            for (o, &a) in out.iter_mut().zip(src) {
                *o = if gate == CONTENT {
                    a.tanh()
                } else {
                    sigmoid(a)
                };
            }
        }
    }
    let cell = Tensor3::from_vec(
        w,
        h,
        c,
        (0..w * h * c)
            .map(|k| {
                gates[FORGET].data()[k] * prev.c.data()[k]
                    + gates[INPUT].data()[k] * gates[CONTENT].data()[k]
            })
            .collect(),
    )?;
    let tanh_c = cell.map(f64::tanh);
    let hidden = gates[OUTPUT].hadamard(&tanh_c);
    let state = ConvLstmState {
        h: hidden,
        c: cell,
        frame_index: prev.frame_index + 1,
    };
    let cache = LstmCache {
        prev: prev.clone(),
        phi: phi.clone(),
        gates,
        tanh_c,
    };
    Ok((state, cache))
}

/// Gradients of one step with respect to its inputs.
#[derive(Clone, Debug)]
pub struct LstmInputGrads {
    pub d_phi: Tensor3,
    pub d_h_prev: Tensor3,
    pub d_c_prev: Tensor3,
}

/// Back-propagates `d_h`/`d_c` (gradients on the new state) through the step,
/// accumulating parameter gradients into `grad`.
pub fn lstm_step_backward(
    cache: &LstmCache,
    p: &ConvLstmParams,
    d_h: &Tensor3,
    d_c: &Tensor3,
    grad: &mut ConvLstmParams,
) -> LstmInputGrads {
    let (w, h, c) = cache.phi.shape();
    let [f, i, o, g] = &cache.gates;
    let pc = p.input.out_channels();
    let mut d_pre = Tensor3::zeros(w, h, pc);
    let mut d_c_prev = Tensor3::zeros(w, h, c);
    for k in 0..w * h * c {
        let (site, ch) = (k / c, k % c);
        let (fv, iv, ov, gv) = (f.data()[k], i.data()[k], o.data()[k], g.data()[k]);
        let tc = cache.tanh_c.data()[k];
        let dh = d_h.data()[k];
        let dct = d_c.data()[k] + dh * ov * (1.0 - tc * tc);
        let d_o = dh * tc;
        let d_f = dct * cache.prev.c.data()[k];
        let d_i = dct * gv;
        let d_g = dct * iv;
        d_c_prev.data_mut()[k] = dct * fv;
        let pre_grads = [
            d_f * fv * (1.0 - fv),
            d_i * iv * (1.0 - iv),
            d_o * ov * (1.0 - ov),
            d_g * (1.0 - gv * gv),
        ];
        for (gate, dv) in pre_grads.into_iter().enumerate() {
            d_pre.data_mut()[site * pc + p.gate_offset(gate) + ch] += dv;
        }
    }
    let d_phi = p.input.backward(&cache.phi, &d_pre, &mut grad.input);
    let d_h_prev = p.hidden.backward(&cache.prev.h, &d_pre, &mut grad.hidden);
    LstmInputGrads {
        d_phi,
        d_h_prev,
        d_c_prev,
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn zero_everything_gives_half_gates_zero_state() {
        let p = ConvLstmParams::zeros(3, false);
        let prev = ConvLstmState::zeros(4, 4, 3);
        let phi = Tensor3::filled(4, 4, 3, 0.7);
        let (state, cache) = lstm_step_forward(&prev, &phi, &p).unwrap();
        for gate in &cache.gates[..3] {
            assert!(gate.data().iter().all(|&v| v == 0.5));
        }
        assert!(cache.gates[CONTENT].data().iter().all(|&v| v == 0.0));
        assert!(state.c.data().iter().all(|&v| v == 0.0));
        assert!(state.h.data().iter().all(|&v| v == 0.0));
        assert_eq!(state.frame_index, 1);
    }

    #[test]
    fn activations_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for shared in [false, true] {
            let p = ConvLstmParams::init(2, shared, 1.0, &mut rng);
            let mut state = ConvLstmState::zeros(5, 4, 2);
            for _ in 0..4 {
                let phi = Tensor3::from_fn(5, 4, 2, |_, _, _| rng.gen_range(-3.0..3.0));
                let (next, cache) = lstm_step_forward(&state, &phi, &p).unwrap();
                for gate in &cache.gates[..3] {
                    assert!(gate.data().iter().all(|&v| v > 0.0 && v < 1.0));
                }
                assert!(next.h.data().iter().all(|&v| v > -1.0 && v < 1.0));
                assert!(next.c.is_finite());
                state = next;
            }
        }
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let p = ConvLstmParams::zeros(2, false);
        let prev = ConvLstmState::zeros(4, 4, 2);
        assert!(matches!(
            lstm_step(&prev, &Tensor3::zeros(4, 3, 2), &p),
            Err(Error::Dimension(_))
        ));
        assert!(lstm_step(&prev, &Tensor3::zeros(4, 4, 3), &p).is_err());
    }

    #[test]
    fn forget_bias_only_on_forget_gate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ConvLstmParams::init(3, false, 1.0, &mut rng);
        assert_eq!(&p.input.bias[..3], &[1.0; 3]);
        assert!(p.input.bias[3..].iter().all(|&b| b == 0.0));
        assert!(p.hidden.bias.iter().all(|&b| b == 0.0));
    }
}
