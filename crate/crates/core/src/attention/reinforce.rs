use crate::error::{Error, Result};
use crate::math::Tensor3;

/// Residual gating `φ^a(x, y, c) = φ · Ψ^s(x, y) · Ψ^c(c) + φ`.
pub fn reinforce(phi: &Tensor3, psi_c: &Tensor3, psi_s: &Tensor3) -> Result<Tensor3> {
    let (w, h, c) = phi.shape();
    if psi_c.shape() != (1, 1, c) || psi_s.shape() != (w, h, 1) {
        return Err(Error::Dimension(format!(
            "cannot broadcast Ψc {:?} and Ψs {:?} over {:?}",
            psi_c.shape(),
            psi_s.shape(),
            phi.shape()
        )));
    }
    let gc = psi_c.data();
    let mut out = phi.clone();
    for (site, values) in out.data_mut().chunks_exact_mut(c).enumerate() {
        let s = psi_s.data()[site];
        for (v, g) in values.iter_mut().zip(gc) {
            *v = *v * s * g + *v;
        }
    }
    Ok(out)
}

/// Returns `(∂L/∂φ, ∂L/∂Ψ^c, ∂L/∂Ψ^s)`.
pub fn reinforce_backward(
    phi: &Tensor3,
    psi_c: &Tensor3,
    psi_s: &Tensor3,
    d_out: &Tensor3,
) -> (Tensor3, Tensor3, Tensor3) {
    let (w, h, c) = phi.shape();
    let mut d_phi = Tensor3::zeros(w, h, c);
    let mut d_c = Tensor3::zeros(1, 1, c);
    let mut d_s = Tensor3::zeros(w, h, 1);
    let gc = psi_c.data();
    for site in 0..w * h {
        let s = psi_s.data()[site];
        let mut acc_s = 0.0;
        for ch in 0..c {
            let k = site * c + ch;
            let (x, g) = (phi.data()[k], d_out.data()[k]);
            d_phi.data_mut()[k] = g * (1.0 + s * gc[ch]);
            acc_s += g * x * gc[ch];
            d_c.data_mut()[ch] += g * x * s;
        }
        d_s.data_mut()[site] = acc_s;
    }
    (d_phi, d_c, d_s)
}
