use crate::error::{Error, Result};

/// Dense `width × height × channels` real tensor.
///
/// Storage is row-major with channels innermost: element `(x, y, c)` lives at
/// `(y * width + x) * channels + c`. All arithmetic is `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Tensor3 {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "{}x{}x{} tensor needs {} values, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        Ok(Tensor3 {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a tensor by evaluating `f(x, y, c)` at every element.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Tensor3 {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn zeros_like(other: &Tensor3) -> Self {
        Self::zeros(other.width, other.height, other.channels)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        debug_assert!(x < self.width && y < self.height && c < self.channels);
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        let i = self.index(x, y, c);
        self.data[i] = value;
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize, c: usize) -> &mut f64 {
        let i = self.index(x, y, c);
        &mut self.data[i]
    }

    /// Channel vector at spatial site `(x, y)`.
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn ensure_same_shape(&self, other: &Tensor3, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "{what}: shape {:?} does not match {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3 {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element-wise combination of two equally shaped tensors.
    pub fn zip_map(&self, other: &Tensor3, f: impl Fn(f64, f64) -> f64) -> Tensor3 {
        assert_eq!(self.shape(), other.shape(), "zip_map shape mismatch");
        Tensor3 {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, a: f64) -> Tensor3 {
        self.map(|v| a * v)
    }

    pub fn add(&self, other: &Tensor3) -> Tensor3 {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor3) -> Tensor3 {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Tensor3) -> Tensor3 {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn add_assign(&mut self, other: &Tensor3) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add_scaled(&mut self, a: f64, other: &Tensor3) {
        assert_eq!(self.shape(), other.shape(), "add_scaled shape mismatch");
        for (s, b) in self.data.iter_mut().zip(&other.data) {
            *s += a * b;
        }
    }

    /// Multiplies every channel plane by a one-channel `width × height` mask.
    pub fn mul_plane(&self, mask: &Tensor3) -> Result<Tensor3> {
        if mask.width != self.width || mask.height != self.height || mask.channels != 1 {
            return Err(Error::Dimension(format!(
                "mask {:?} cannot broadcast over {:?}",
                mask.shape(),
                self.shape()
            )));
        }
        let c = self.channels;
        let mut out = self.clone();
        for (site, m) in mask.data.iter().enumerate() {
            for v in &mut out.data[site * c..(site + 1) * c] {
                *v *= m;
            }
        }
        Ok(out)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor3) -> f64 {
        assert_eq!(self.shape(), other.shape(), "dot shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of channel `c` as a `width × height × 1` tensor.
    pub fn channel(&self, c: usize) -> Tensor3 {
        assert!(c < self.channels);
        Tensor3 {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self
                .data
                .iter()
                .skip(c)
                .step_by(self.channels)
                .copied()
                .collect(),
        }
    }

    /// Circular shift: `out(x, y) = self(x - dx, y - dy)` with wrap-around.
    pub fn roll(&self, dx: isize, dy: isize) -> Tensor3 {
        let (w, h, c) = self.shape();
        let mut out = Tensor3::zeros(w, h, c);
        for y in 0..h {
            let sy = (y as isize - dy).rem_euclid(h as isize) as usize;
            for x in 0..w {
                let sx = (x as isize - dx).rem_euclid(w as isize) as usize;
                let src = (sy * w + sx) * c;
                let dst = (y * w + x) * c;
                out.data[dst..dst + c].copy_from_slice(&self.data[src..src + c]);
            }
        }
        out
    }

    /// Stacks equally sized tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor3]) -> Result<Tensor3> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
        let (w, h) = (first.width, first.height);
        if parts.iter().any(|p| p.width != w || p.height != h) {
            return Err(Error::Dimension("concat: spatial sizes differ".into()));
        }
        let total: usize = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(w * h * total);
        for site in 0..w * h {
            for p in parts {
                data.extend_from_slice(&p.data[site * p.channels..(site + 1) * p.channels]);
            }
        }
        Tensor3::from_vec(w, h, total, data)
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_channel_last() {
        let t = Tensor3::from_fn(3, 2, 2, |x, y, c| (100 * y + 10 * x + c) as f64);
        assert_eq!(t.data()[0..4], [0.0, 1.0, 10.0, 11.0]);
        assert_eq!(t.get(2, 1, 1), 121.0);
        assert_eq!(t.pixel(1, 1), &[110.0, 111.0]);
    }

    #[test]
    fn roll_wraps() {
        let t = Tensor3::from_fn(4, 1, 1, |x, _, _| x as f64);
        assert_eq!(t.roll(1, 0).data(), &[3.0, 0.0, 1.0, 2.0]);
        assert_eq!(t.roll(-1, 0).data(), &[1.0, 2.0, 3.0, 0.0]);
        assert_eq!(t.roll(4, 0), t);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(matches!(
            Tensor3::from_vec(2, 2, 1, vec![0.0; 3]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn concat_then_channel_extracts_parts() {
        let a = Tensor3::from_fn(2, 2, 1, |x, y, _| (x + 2 * y) as f64);
        let b = Tensor3::filled(2, 2, 2, 7.0);
        let cat = Tensor3::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.channels(), 3);
        assert_eq!(cat.channel(0), a);
        assert_eq!(cat.channel(2), b.channel(1));
    }
}
