use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::image::ImageFrame;
use crate::error::{Error, Result};
use crate::math::Tensor3;

/// Number of hierarchy levels every pyramid carries.
pub const LEVELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureBackend {
    Handcrafted,
    Precomputed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Pixels per feature cell along each axis.
    pub cell_size: usize,
    pub orientation_bins: usize,
    pub levels: usize,
    pub backend: FeatureBackend,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            cell_size: 4,
            orientation_bins: 8,
            levels: LEVELS,
            backend: FeatureBackend::Handcrafted,
        }
    }
}

impl FeatureConfig {
    /// Channels per level: one intensity channel plus the orientation histogram.
    pub fn channels(&self) -> usize {
        1 + self.orientation_bins
    }

    pub fn validate(&self, patch_size: usize) -> Result<()> {
        if self.levels != LEVELS {
            return Err(Error::Config(format!(
                "feature levels must be {LEVELS}, got {}",
                self.levels
            )));
        }
        if self.cell_size == 0 || self.orientation_bins == 0 {
            return Err(Error::Config(
                "cell size and orientation bins must be positive".into(),
            ));
        }
        if !patch_size.is_multiple_of(self.cell_size) || !(patch_size / self.cell_size).is_power_of_two() {
            return Err(Error::Config(format!(
                "patch size {patch_size} / cell size {} must be a power of two",
                self.cell_size
            )));
        }
        Ok(())
    }
}

/// Three equally sized feature maps, finest first.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    levels: Vec<Tensor3>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<Tensor3>) -> Result<Self> {
        if levels.len() != LEVELS {
            return Err(Error::Invariant(format!(
                "pyramid needs {LEVELS} levels, got {}",
                levels.len()
            )));
        }
        let (w, h, _) = levels[0].shape();
        for (i, l) in levels.iter().enumerate() {
            if l.width() != w || l.height() != h {
                return Err(Error::Invariant(format!(
                    "level {i} is {}x{} but level 0 is {w}x{h}",
                    l.width(),
                    l.height()
                )));
            }
            if !l.is_finite() {
                return Err(Error::Data(format!("level {i} contains non-finite values")));
            }
        }
        Ok(FeaturePyramid { levels })
    }

    pub fn levels(&self) -> &[Tensor3] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> &Tensor3 {
        &self.levels[i]
    }

    pub fn into_levels(self) -> Vec<Tensor3> {
        self.levels
    }

    pub fn size(&self) -> (usize, usize) {
        (self.levels[0].width(), self.levels[0].height())
    }
}

/// Handcrafted three-level hierarchy.
///
/// Level 0 holds, per cell, the mean intensity and an unsigned-orientation
/// histogram of gradient magnitudes (central differences, replicated border,
/// hard orientation bins, bilinear spatial voting). Levels 1 and 2 are level 0
/// average-pooled over 2×2 and 4×4 cell blocks and upsampled back by
/// repetition. Every channel plane is then scaled to unit L2 norm (all-zero
/// planes stay zero).
pub fn compute_features(patch: &ImageFrame, cfg: &FeatureConfig) -> Result<FeaturePyramid> {
    let mut levels = raw_levels(patch, cfg)?;
    for level in &mut levels {
        let norms = plane_norms(level);
        scale_planes(level, &norms);
    }
    FeaturePyramid::new(levels)
}

fn raw_levels(patch: &ImageFrame, cfg: &FeatureConfig) -> Result<Vec<Tensor3>> {
    let cell = cfg.cell_size;
    if cell == 0 || !patch.width().is_multiple_of(cell) || !patch.height().is_multiple_of(cell) {
        return Err(Error::Parameter(format!(
            "patch {}x{} not divisible by cell size {cell}",
            patch.width(),
            patch.height()
        )));
    }
    let (pw, ph) = (patch.width(), patch.height());
    let (cw, ch) = (pw / cell, ph / cell);
    let bins = cfg.orientation_bins;
    let channels = cfg.channels();

    let lum: Vec<f64> = (0..ph)
        .flat_map(|y| (0..pw).map(move |x| (x, y)))
        .map(|(x, y)| patch.intensity(x, y))
        .collect();
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, pw as isize - 1) as usize;
        let y = y.clamp(0, ph as isize - 1) as usize;
        lum[y * pw + x]
    };

    // Each pixel votes bilinearly into the four nearest cell centres; cells
    // then hold weighted means, so sub-cell shifts change features smoothly.
    let mut base = Tensor3::zeros(cw, ch, channels);
    let mut weight = vec![0.0; cw * ch];
    let split = |p: usize, n: usize| {
        let u = (p as f64 + 0.5) / cell as f64 - 0.5;
        let i0 = u.floor();
        let f = u - i0;
        let clamp = |i: f64| (i.max(0.0) as usize).min(n - 1);
        [(clamp(i0), 1.0 - f), (clamp(i0 + 1.0), f)]
    };
    for y in 0..ph {
        let ys = split(y, ch);
        for x in 0..pw {
            let xs = split(x, cw);
            let (xi, yi) = (x as isize, y as isize);
            let gx = at(xi + 1, yi) - at(xi - 1, yi);
            let gy = at(xi, yi + 1) - at(xi, yi - 1);
            let mag = (gx * gx + gy * gy).sqrt();
            let bin = (mag > 0.0).then(|| {
                let theta = gy.atan2(gx).rem_euclid(PI);
                ((theta / PI * bins as f64) as usize).min(bins - 1)
            });
            let v = lum[y * pw + x];
            for &(cy, wy) in &ys {
                for &(cx, wx) in &xs {
                    let wgt = wx * wy;
                    if wgt == 0.0 {
                        continue;
                    }
                    weight[cy * cw + cx] += wgt;
                    *base.get_mut(cx, cy, 0) += v * wgt;
                    if let Some(b) = bin {
                        *base.get_mut(cx, cy, 1 + b) += mag * wgt;
                    }
                }
            }
        }
    }
    for (site, w) in base.data_mut().chunks_exact_mut(channels).zip(&weight) {
        site.iter_mut().for_each(|v| *v /= w);
    }

    Ok(vec![
        base.clone(),
        block_smooth(&base, 2),
        block_smooth(&base, 4),
    ])
}

/// Average over `block × block` tiles, written back to every cell of the tile.
fn block_smooth(t: &Tensor3, block: usize) -> Tensor3 {
    let (w, h, c) = t.shape();
    let mut out = Tensor3::zeros(w, h, c);
    for by in (0..h).step_by(block) {
        for bx in (0..w).step_by(block) {
            let ys = by..(by + block).min(h);
            let xs = bx..(bx + block).min(w);
            let count = (ys.len() * xs.len()) as f64;
            for ch in 0..c {
                let mut acc = 0.0;
                for y in ys.clone() {
                    for x in xs.clone() {
                        acc += t.get(x, y, ch);
                    }
                }
                for y in ys.clone() {
                    for x in xs.clone() {
                        out.set(x, y, ch, acc / count);
                    }
                }
            }
        }
    }
    out
}

fn plane_norms(t: &Tensor3) -> Vec<f64> {
    let c = t.channels();
    let mut norms = vec![0.0f64; c];
    for site in t.data().chunks_exact(c) {
        for (n, v) in norms.iter_mut().zip(site) {
            *n += v * v;
        }
    }
    norms.into_iter().map(f64::sqrt).collect()
}

/// Divides every plane by its norm; zero norms zero the plane.
fn scale_planes(t: &mut Tensor3, norms: &[f64]) {
    let c = t.channels();
    let inv: Vec<f64> = norms
        .iter()
        .map(|n| if *n > 0.0 { 1.0 / n } else { 0.0 })
        .collect();
    for site in t.data_mut().chunks_exact_mut(c) {
        for (v, s) in site.iter_mut().zip(&inv) {
            *v *= s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> FeatureConfig {
        FeatureConfig::default()
    }

    #[test]
    fn constant_patch_has_no_gradient_energy() {
        let patch = ImageFrame::filled(32, 32, [120, 120, 120]).unwrap();
        let pyr = compute_features(&patch, &cfg()).unwrap();
        for level in pyr.levels() {
            let first = level.get(0, 0, 0);
            for y in 0..8 {
                for x in 0..8 {
                    assert!((level.get(x, y, 0) - first).abs() < 1e-15);
                    for b in 1..level.channels() {
                        assert_eq!(level.get(x, y, b), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn vertical_edge_fills_horizontal_gradient_bin() {
        let mut g = vec![30u8; 32 * 32];
        for y in 0..32 {
            for x in 16..32 {
                g[y * 32 + x] = 200;
            }
        }
        let patch = ImageFrame::from_gray(32, 32, &g).unwrap();
        let pyr = compute_features(&patch, &cfg()).unwrap();
        let l0 = pyr.level(0);
        // the only non-zero gradients are horizontal (gy = 0, gx > 0) -> angle 0 -> bin 0
        let energy = |b: usize| l0.channel(1 + b).norm_sq();
        assert!(energy(0) > 0.0);
        for b in 1..8 {
            assert_eq!(energy(b), 0.0, "bin {b}");
        }
        // edge straddles cells 3 and 4 (pixels 15..=16)
        assert!(l0.get(3, 0, 1) > 0.0 && l0.get(4, 0, 1) > 0.0);
        assert_eq!(l0.get(0, 0, 1), 0.0);
    }

    #[test]
    fn coarse_levels_are_blockwise_constant() {
        let g: Vec<u8> = (0..64 * 64).map(|i| ((i * 7919) % 256) as u8).collect();
        let patch = ImageFrame::from_gray(64, 64, &g).unwrap();
        let pyr = compute_features(&patch, &cfg()).unwrap();
        for (level, block) in [(1, 2), (2, 4)] {
            let t = pyr.level(level);
            for y in 0..16 {
                for x in 0..16 {
                    let (bx, by) = (x - x % block, y - y % block);
                    for c in 0..t.channels() {
                        assert_eq!(t.get(x, y, c), t.get(bx, by, c));
                    }
                }
            }
        }
    }

    #[test]
    fn planes_are_unit_norm() {
        let g: Vec<u8> = (0..32 * 32)
            .map(|i| ((i * 31 + i / 32 * 17) % 256) as u8)
            .collect();
        let patch = ImageFrame::from_gray(32, 32, &g).unwrap();
        let pyr = compute_features(&patch, &cfg()).unwrap();
        for level in pyr.levels() {
            for c in 0..level.channels() {
                let n = level.channel(c).norm_sq();
                assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn indivisible_patch_rejected() {
        let patch = ImageFrame::filled(30, 32, [0, 0, 0]).unwrap();
        assert!(compute_features(&patch, &cfg()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate(128).is_ok());
        assert!(cfg().validate(96).is_err());
        let bad = FeatureConfig { levels: 2, ..cfg() };
        assert!(bad.validate(128).is_err());
    }
}
