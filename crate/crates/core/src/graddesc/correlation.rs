//! Differentiable correlation layer: single-frame filter solve, response
//! and squared-error loss, with analytic gradients for every input patch.

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;

use crate::dcf::{solve_filter, train_filter_frame, ContextSet, GramStack};
use crate::error::{Error, Result};
use crate::math::fft::ifft2d_complex;
use crate::math::{fft2d, ifft2d_with_residue, Spectrum, Tensor3};

/// Gradients above this imaginary residue indicate a broken symmetry.
const RESIDUE_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct CorrelationCache {
    z_hat: Vec<Spectrum>,
    x_hat: Spectrum,
    y_hat: Spectrum,
    den: GramStack,
    filter: Spectrum,
    residual: Tensor3,
    lambda2: f64,
}

impl CorrelationCache {
    pub fn residual(&self) -> &Tensor3 {
        &self.residual
    }

    /// Response `g` of the solved filter on the probe.
    pub fn response(&self, label: &Tensor3) -> Tensor3 {
        self.residual.add(label)
    }
}

/// Gradients of the loss with respect to the layer inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationGrads {
    pub d_x: Tensor3,
    pub d_z0: Tensor3,
    pub d_zi: Vec<Tensor3>,
    /// Largest imaginary residue seen when returning to the spatial domain.
    pub residue: f64,
}

/// `L = Σ (g(x) − y)²` where `g` is the response of the filter solved on `cs`.
pub fn forward_loss(
    cs: &ContextSet,
    x: &Tensor3,
    label: &Tensor3,
    lambda1: f64,
    lambda2: f64,
) -> Result<(f64, CorrelationCache)> {
    x.ensure_same_shape(&cs.target, "search features")?;
    let (w, h, _) = x.shape();
    if label.shape() != (w, h, 1) {
        return Err(Error::Dimension(format!(
            "label {:?} does not match features {:?}",
            label.shape(),
            x.shape()
        )));
    }
    let y_hat = fft2d(label)?;
    let terms = train_filter_frame(cs, &y_hat, lambda1, lambda2)?;
    let filter = solve_filter(&terms.num, &terms.den)?;
    let x_hat = fft2d(x)?;
    let mut g_hat = Spectrum::zeros(w, h, 1);
    for bin in 0..x_hat.bins() {
        g_hat.bin_mut(bin)[0] = filter
            .bin(bin)
            .iter()
            .zip(x_hat.bin(bin))
            .map(|(v, x)| v * x)
            .sum();
    }
    let (g, _) = ifft2d_with_residue(&g_hat)?;
    let residual = g.sub(label);
    let loss = residual.norm_sq();
    let mut z_hat = vec![fft2d(&cs.target)?];
    for ctx in &cs.contexts {
        z_hat.push(fft2d(ctx)?);
    }
    Ok((
        loss,
        CorrelationCache {
            z_hat,
            x_hat,
            y_hat,
            den: terms.den,
            filter,
            residual,
            lambda2,
        },
    ))
}

/// Back to the spatial domain: `N · Re(F⁻¹(s))`, tracking the imaginary part.
fn to_spatial(s: &Spectrum, residue: &mut f64) -> Result<Tensor3> {
    let n = (s.width() * s.height()) as f64;
    let z = ifft2d_complex(s)?;
    let (w, h, c) = s.shape();
    let mut out = Tensor3::zeros(w, h, c);
    let mut scale: f64 = 0.0;
    let mut imag: f64 = 0.0;
    for (o, v) in out.data_mut().iter_mut().zip(z.data()) {
        *o = n * v.re;
        scale = scale.max(o.abs());
        imag = imag.max(n * v.im.abs());
    }
    *residue = residue.max(imag / scale.max(1.0));
    Ok(out)
}

/// Analytic gradients of [`forward_loss`].
pub fn backward(cache: &CorrelationCache) -> Result<CorrelationGrads> {
    let (w, h, c) = cache.x_hat.shape();
    let n = (w * h) as f64;
    let r_hat = fft2d(&cache.residual)?;
    let mut dx_hat = Spectrum::zeros(w, h, c);
    let mut dz_hat: Vec<Spectrum> = cache
        .z_hat
        .iter()
        .map(|_| Spectrum::zeros(w, h, c))
        .collect();

    for bin in 0..r_hat.bins() {
        let g_bar = r_hat.bin(bin)[0] * (2.0 / n);
        if g_bar == Complex64::new(0.0, 0.0) {
            continue;
        }
        let v = cache.filter.bin(bin);
        let xb = cache.x_hat.bin(bin);
        for (d, vc) in dx_hat.bin_mut(bin).iter_mut().zip(v) {
            *d = g_bar * vc.conj();
        }
        let v_bar: Vec<Complex64> = xb.iter().map(|x| g_bar * x.conj()).collect();
        let b_bar: Vec<Complex64> = if c == 1 {
            vec![v_bar[0] / cache.den.data()[bin]]
        } else {
            let m: DMatrix<Complex64> = cache.den.matrix(bin);
            let rhs = DVector::from_column_slice(&v_bar);
            let sol = match m.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => m.lu().solve(&rhs).ok_or_else(|| {
                    Error::Invariant(format!("singular filter system at bin {bin}"))
                })?,
            };
            sol.iter().copied().collect()
        };
        // M̄ = −b̄ vᴴ
        let m_bar = |r: usize, col: usize| -b_bar[r] * v[col].conj();
        let y = cache.y_hat.bin(bin)[0];
        for (j, zj) in cache.z_hat.iter().enumerate() {
            let s = if j == 0 { 1.0 } else { cache.lambda2 };
            let z = zj.bin(bin);
            let dz = dz_hat[j].bin_mut(bin);
            if j == 0 {
                for ch in 0..c {
                    dz[ch] += b_bar[ch].conj() * y;
                }
            }
            if s == 0.0 {
                continue;
            }
            for e in 0..c {
                let mut acc = Complex64::new(0.0, 0.0);
                for d in 0..c {
                    acc += m_bar(d, e) * z[d] + m_bar(e, d).conj() * z[d];
                }
                dz[e] += acc * s;
            }
        }
    }

    let mut residue = 0.0;
    let d_x = to_spatial(&dx_hat, &mut residue)?;
    let mut spatial = dz_hat
        .iter()
        .map(|s| to_spatial(s, &mut residue))
        .collect::<Result<Vec<_>>>()?;
    if residue > RESIDUE_TOL {
        return Err(Error::Invariant(format!(
            "gradient has imaginary residue {residue:e}"
        )));
    }
    let d_z0 = spatial.remove(0);
    Ok(CorrelationGrads {
        d_x,
        d_z0,
        d_zi: spatial,
        residue,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::math::gaussian_label;

    fn random(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Tensor3 {
        Tensor3::from_fn(w, h, c, |_, _, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn self_response_label_gives_near_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = random(&mut rng, 8, 8, 1);
        let cs = ContextSet::new(z.clone(), vec![]).unwrap();
        let y0 = gaussian_label(8, 8, 1.0, (0.0, 0.0)).unwrap();
        // the self-response is a fixed point up to terms of order λ₁/|ẑ|²
        let (_, cache) = forward_loss(&cs, &z, &y0, 1e-9, 0.0).unwrap();
        let y = cache.response(&y0);
        let (loss, _) = forward_loss(&cs, &z, &y, 1e-9, 0.0).unwrap();
        assert!(loss < 1e-12 * y.norm_sq(), "{loss:e}");
    }

    #[test]
    fn zero_residual_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cs = ContextSet::new(
            random(&mut rng, 8, 8, 2),
            (0..4).map(|_| random(&mut rng, 8, 8, 2)).collect(),
        )
        .unwrap();
        let y = gaussian_label(8, 8, 1.0, (0.0, 0.0)).unwrap();
        let (_, mut cache) = forward_loss(&cs, &random(&mut rng, 8, 8, 2), &y, 1e-4, 0.1).unwrap();
        cache.residual = Tensor3::zeros(8, 8, 1);
        let g = backward(&cache).unwrap();
        let all = g
            .d_x
            .data()
            .iter()
            .chain(g.d_z0.data())
            .chain(g.d_zi.iter().flat_map(|t| t.data()));
        assert!(all.copied().all(|v| v == 0.0));
    }

    #[test]
    fn doubling_residual_quadruples_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cs = ContextSet::new(random(&mut rng, 8, 8, 1), vec![]).unwrap();
        let x = random(&mut rng, 8, 8, 1);
        let y = gaussian_label(8, 8, 1.0, (0.0, 0.0)).unwrap();
        // the filter is linear in the label, so g − y scales with it
        let (l1, _) = forward_loss(&cs, &x, &y, 1e-4, 0.0).unwrap();
        let (l2, _) = forward_loss(&cs, &x, &y.scale(2.0), 1e-4, 0.0).unwrap();
        assert!((l2 - 4.0 * l1).abs() < 1e-9 * l2);
    }
}
