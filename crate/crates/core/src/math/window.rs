use std::f64::consts::PI;

use super::tensor::Tensor3;
use crate::error::{Error, Result};

fn hann_axis(n: usize) -> Vec<f64> {
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / denom).cos()))
        .collect()
}

/// Separable raised-cosine window, one channel.
pub fn hann_window(width: usize, height: usize) -> Result<Tensor3> {
    if width < 2 || height < 2 {
        return Err(Error::Parameter(format!(
            "hann window needs at least 2x2, got {width}x{height}"
        )));
    }
    let hx = hann_axis(width);
    let hy = hann_axis(height);
    Ok(Tensor3::from_fn(width, height, 1, |x, y, _| hx[x] * hy[y]))
}

/// Signed circular offset of `p` from `center` on a ring of length `n`,
/// folded into `(-n/2, n/2]`.
pub(crate) fn circular_offset(p: f64, center: f64, n: usize) -> f64 {
    let n = n as f64;
    let mut d = (p - center).rem_euclid(n);
    if d > n / 2.0 {
        d -= n;
    }
    d
}

/// Gaussian regression target `exp(-d²/(2σ²))` where `d` is the circular
/// distance to `center`.
pub fn gaussian_label(
    width: usize,
    height: usize,
    sigma: f64,
    center: (f64, f64),
) -> Result<Tensor3> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!(
            "label sigma must be > 0, got {sigma}"
        )));
    }
    let (cx, cy) = center;
    if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
        return Err(Error::Parameter(format!(
            "label center ({cx}, {cy}) outside {width}x{height} plane"
        )));
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    Ok(Tensor3::from_fn(width, height, 1, |x, y, _| {
        let dx = circular_offset(x as f64, cx, width);
        let dy = circular_offset(y as f64, cy, height);
        (-(dx * dx + dy * dy) * inv).exp()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hann_corners_zero_center_one() {
        for (w, h) in [(2, 2), (5, 5), (8, 6), (32, 32)] {
            let win = hann_window(w, h).unwrap();
            for (x, y) in [(0, 0), (w - 1, 0), (0, h - 1), (w - 1, h - 1)] {
                assert_eq!(win.get(x, y, 0), 0.0);
            }
        }
        assert!((hann_window(5, 5).unwrap().get(2, 2, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hann_four_point_axis() {
        // middle row of a 5-high window has weight 1, so it equals the x axis
        let win = hann_window(4, 5).unwrap();
        for (x, e) in [0.0, 0.75, 0.75, 0.0].into_iter().enumerate() {
            assert!((win.get(x, 2, 0) - e).abs() < 1e-12);
        }
        assert!(win.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn hann_rejects_tiny() {
        assert!(hann_window(1, 4).is_err());
    }

    #[test]
    fn label_peak_and_value() {
        let y = gaussian_label(16, 16, 2.0, (0.0, 0.0)).unwrap();
        assert_eq!(y.get(0, 0, 0), 1.0);
        // exp(-4 / (2 * 2^2)) = exp(-1/2)
        assert!((y.get(2, 0, 0) - (-0.5f64).exp()).abs() < 1e-12);
        assert!((y.get(14, 0, 0) - (-0.5f64).exp()).abs() < 1e-12);
        let narrow = gaussian_label(16, 16, 2f64.sqrt(), (0.0, 0.0)).unwrap();
        assert!((narrow.get(2, 0, 0) - 0.36787944117144233).abs() < 1e-12);
        assert_eq!(y.data().iter().cloned().fold(f64::MIN, f64::max), 1.0);
    }

    #[test]
    fn label_symmetric_about_center() {
        let (w, h) = (16, 8);
        let (cx, cy) = (5usize, 3usize);
        let y = gaussian_label(w, h, 1.7, (cx as f64, cy as f64)).unwrap();
        assert_eq!(y.get(cx, cy, 0), 1.0);
        for dy in 0..h {
            for dx in 0..w {
                let a = y.get((cx + dx) % w, (cy + dy) % h, 0);
                let b = y.get((cx + w - dx) % w, (cy + h - dy) % h, 0);
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn label_rejects_bad_sigma() {
        assert!(matches!(
            gaussian_label(8, 8, 0.0, (0.0, 0.0)),
            Err(Error::Parameter(_))
        ));
        assert!(gaussian_label(8, 8, -1.0, (0.0, 0.0)).is_err());
    }
}
