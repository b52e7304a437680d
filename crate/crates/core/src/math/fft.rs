//! Per-channel 2-D FFT on power-of-two planes.
//!
//! Forward transform uses the `e^{-2πi}` kernel and is unnormalized; the
//! inverse carries the `1/(W·H)` factor.

use std::cell::RefCell;

use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use super::tensor::Tensor3;
use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Complex counterpart of [`Tensor3`], same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Spectrum {
            width,
            height,
            channels,
            data: vec![Complex64::new(0.0, 0.0); width * height * channels],
        }
    }

    pub fn from_vec(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<Complex64>,
    ) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "{width}x{height}x{channels} spectrum needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Spectrum {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize, c: usize) -> Complex64 {
        self.data[(v * self.width + u) * self.channels + c]
    }

    /// Channel vector of frequency bin number `bin` (row-major bin order).
    #[inline]
    pub fn bin(&self, bin: usize) -> &[Complex64] {
        &self.data[bin * self.channels..(bin + 1) * self.channels]
    }

    #[inline]
    pub fn bin_mut(&mut self, bin: usize) -> &mut [Complex64] {
        &mut self.data[bin * self.channels..(bin + 1) * self.channels]
    }

    pub fn bins(&self) -> usize {
        self.width * self.height
    }
}

pub fn check_fft_dims(width: usize, height: usize) -> Result<()> {
    let ok = |n: usize| n >= 2 && n.is_power_of_two();
    if !ok(width) || !ok(height) {
        return Err(Error::Dimension(format!(
            "FFT planes must be powers of two >= 2, got {width}x{height}"
        )));
    }
    Ok(())
}

/// In-place 2-D transform of every channel plane. No normalization.
fn transform(
    data: &mut [Complex64],
    width: usize,
    height: usize,
    channels: usize,
    dir: FftDirection,
) {
    let (row_fft, col_fft) = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft(width, dir), p.plan_fft(height, dir))
    });
    let n = width * height;
    let mut plane = vec![Complex64::new(0.0, 0.0); n];
    let mut transposed = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..channels {
        for (i, v) in plane.iter_mut().enumerate() {
            *v = data[i * channels + c];
        }
        row_fft.process(&mut plane);
        for y in 0..height {
            for x in 0..width {
                transposed[x * height + y] = plane[y * width + x];
            }
        }
        col_fft.process(&mut transposed);
        for x in 0..width {
            for y in 0..height {
                data[(y * width + x) * channels + c] = transposed[x * height + y];
            }
        }
    }
}

/// Forward 2-D DFT of each channel plane.
pub fn fft2d(t: &Tensor3) -> Result<Spectrum> {
    let (w, h, c) = t.shape();
    check_fft_dims(w, h)?;
    let mut data: Vec<Complex64> = t.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(&mut data, w, h, c, FftDirection::Forward);
    Spectrum::from_vec(w, h, c, data)
}

/// Forward transform of complex planes.
pub fn fft2d_complex(s: &Spectrum) -> Result<Spectrum> {
    check_fft_dims(s.width, s.height)?;
    let mut out = s.clone();
    transform(
        &mut out.data,
        s.width,
        s.height,
        s.channels,
        FftDirection::Forward,
    );
    Ok(out)
}

/// Full complex inverse (normalized by `1/(W·H)`).
pub fn ifft2d_complex(s: &Spectrum) -> Result<Spectrum> {
    check_fft_dims(s.width, s.height)?;
    let mut out = s.clone();
    transform(
        &mut out.data,
        s.width,
        s.height,
        s.channels,
        FftDirection::Inverse,
    );
    let norm = 1.0 / (s.width * s.height) as f64;
    for v in &mut out.data {
        *v *= norm;
    }
    Ok(out)
}

/// Inverse transform, returning the real part and the largest absolute
/// imaginary component that was discarded.
pub fn ifft2d_with_residue(s: &Spectrum) -> Result<(Tensor3, f64)> {
    let full = ifft2d_complex(s)?;
    let residue = full.data.iter().fold(0.0f64, |m, v| m.max(v.im.abs()));
    let real = Tensor3::from_vec(
        s.width,
        s.height,
        s.channels,
        full.data.iter().map(|v| v.re).collect(),
    )?;
    Ok((real, residue))
}

/// Inverse 2-D DFT, real part.
pub fn ifft2d(s: &Spectrum) -> Result<Tensor3> {
    ifft2d_with_residue(s).map(|(t, _)| t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_transforms_to_ones() {
        let mut t = Tensor3::zeros(8, 8, 1);
        t.set(0, 0, 0, 1.0);
        let s = fft2d(&t).unwrap();
        for v in s.data() {
            assert_eq!(*v, Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn constant_concentrates_in_dc() {
        let c = 0.75;
        let s = fft2d(&Tensor3::filled(8, 8, 1, c)).unwrap();
        assert!((s.get(0, 0, 0) - Complex64::new(64.0 * c, 0.0)).norm() < 1e-12);
        for (i, v) in s.data().iter().enumerate().skip(1) {
            assert!(v.norm() < 1e-12, "bin {i} = {v}");
        }
    }

    #[test]
    fn zero_and_dc_only_inverse() {
        let zero = ifft2d(&Spectrum::zeros(8, 8, 1)).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));

        let mut dc = Spectrum::zeros(8, 8, 1);
        dc.data_mut()[0] = Complex64::new(64.0, 0.0);
        let t = ifft2d(&dc).unwrap();
        assert!(t.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(matches!(
            fft2d(&Tensor3::zeros(6, 8, 1)),
            Err(Error::Dimension(_))
        ));
        assert!(fft2d(&Tensor3::zeros(1, 8, 1)).is_err());
    }
}
