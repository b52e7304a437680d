//! Context-aware discriminative correlation filter.
//!
//! The filter minimizes
//! `‖Σ_c w_c ⋆ z₀_c − y‖² + λ₁‖w‖² + λ₂ Σ_i ‖Σ_c w_c ⋆ z_i_c‖²`
//! over all cyclic shifts. In the Fourier domain the problem decouples per
//! frequency into a `C×C` Hermitian system
//!
//! `(Σ_j s_j conj(ẑ_j) ẑ_jᵀ + λ₁ I) v = conj(ẑ₀) ŷ`, with `s₀ = 1`, `s_i = λ₂`,
//!
//! and the response to a probe `x` is `ĝ = Σ_c v_c x̂_c`. For a single channel
//! this reduces to the familiar element-wise division.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::math::fft::check_fft_dims;
use crate::math::{fft2d, ifft2d_with_residue, Spectrum, Tensor3};
use crate::raft::{self, Manifest, ManifestEntry};

/// Largest tolerated imaginary residue of a response, relative to its peak.
const RESIDUE_TOL: f64 = 1e-8;

/// Windowed target template and its background context patches.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextSet {
    pub target: Tensor3,
    pub contexts: Vec<Tensor3>,
}

impl ContextSet {
    pub fn new(target: Tensor3, contexts: Vec<Tensor3>) -> Result<Self> {
        for (i, c) in contexts.iter().enumerate() {
            c.ensure_same_shape(&target, &format!("context {i}"))?;
        }
        Ok(ContextSet { target, contexts })
    }

    pub fn k(&self) -> usize {
        self.contexts.len()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.target.shape()
    }
}

/// Whole-cell circular offsets `(Δx, Δy)` of the target and each context
/// patch, relative to the plane center.
pub fn context_offsets(
    plane_size: (usize, usize),
    target: &Rect,
    k: usize,
) -> Result<Vec<(isize, isize)>> {
    if k != 0 && k != 4 {
        return Err(Error::Parameter(format!(
            "context count must be 0 or 4, got {k}"
        )));
    }
    if !target.is_valid() {
        return Err(Error::Parameter(format!(
            "degenerate target rect {target:?}"
        )));
    }
    let (w, h) = plane_size;
    let (cx, cy) = target.center();
    let base = (
        (cx - w as f64 / 2.0).round() as isize,
        (cy - h as f64 / 2.0).round() as isize,
    );
    let (tw, th) = (
        target.w.round().max(1.0) as isize,
        target.h.round().max(1.0) as isize,
    );
    let mut out = vec![base];
    if k == 4 {
        for (dx, dy) in [(tw, 0), (-tw, 0), (0, th), (0, -th)] {
            out.push((base.0 + dx, base.1 + dy));
        }
    }
    Ok(out)
}

/// Samples `window(p) · plane(p + offset)` with circular wrap.
fn windowed_shift(plane: &Tensor3, window: &Tensor3, offset: (isize, isize)) -> Result<Tensor3> {
    plane.roll(-offset.0, -offset.1).mul_plane(window)
}

/// Builds the target patch and `k ∈ {0, 4}` axial context patches from a
/// feature plane. `target` is in feature cells; the patches sit at
/// `(±w, 0)` and `(0, ±h)` from its center and share its window.
pub fn make_context_set(
    plane: &Tensor3,
    target: &Rect,
    k: usize,
    window: &Tensor3,
) -> Result<ContextSet> {
    if window.shape() != (plane.width(), plane.height(), 1) {
        return Err(Error::Dimension(format!(
            "window {:?} does not match plane {:?}",
            window.shape(),
            plane.shape()
        )));
    }
    let offsets = context_offsets((plane.width(), plane.height()), target, k)?;
    let mut patches = offsets
        .iter()
        .map(|&o| windowed_shift(plane, window, o))
        .collect::<Result<Vec<_>>>()?;
    let target = patches.remove(0);
    Ok(ContextSet {
        target,
        contexts: patches,
    })
}

/// Adjoint of [`make_context_set`]: folds patch gradients back onto the plane.
pub fn context_set_backward(
    plane_size: (usize, usize),
    target: &Rect,
    window: &Tensor3,
    d_target: &Tensor3,
    d_contexts: &[Tensor3],
) -> Result<Tensor3> {
    let offsets = context_offsets(plane_size, target, d_contexts.len())?;
    let mut out = Tensor3::zeros_like(d_target);
    for (o, d) in offsets
        .iter()
        .zip(std::iter::once(d_target).chain(d_contexts))
    {
        out.add_assign(&d.mul_plane(window)?.roll(o.0, o.1));
    }
    Ok(out)
}

/// Per-frequency Hermitian `C×C` matrices stored row-major, bin after bin.
#[derive(Clone, Debug, PartialEq)]
pub struct GramStack {
    channels: usize,
    data: Vec<Complex64>,
}

impl GramStack {
    pub fn zeros(bins: usize, channels: usize) -> Self {
        GramStack {
            channels,
            data: vec![Complex64::new(0.0, 0.0); bins * channels * channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.data.len() / (self.channels * self.channels).max(1)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn matrix(&self, bin: usize) -> DMatrix<Complex64> {
        let c = self.channels;
        DMatrix::from_row_slice(c, c, &self.data[bin * c * c..(bin + 1) * c * c])
    }

    /// Adds `scale · conj(a) aᵀ` at every bin.
    fn add_outer(&mut self, spec: &Spectrum, scale: f64) {
        let c = self.channels;
        for bin in 0..spec.bins() {
            let a = spec.bin(bin);
            let m = &mut self.data[bin * c * c..(bin + 1) * c * c];
            for r in 0..c {
                let ar = a[r].conj() * scale;
                for (col, &ac) in a.iter().enumerate() {
                    m[r * c + col] += ar * ac;
                }
            }
        }
    }

    fn add_diagonal(&mut self, value: f64) {
        let c = self.channels;
        for bin in 0..self.bins() {
            for r in 0..c {
                self.data[bin * c * c + r * c + r] += value;
            }
        }
    }
}

/// One frame's numerator and denominator terms.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTerms {
    /// `conj(ẑ₀) ⊙ ŷ`, per channel.
    pub num: Spectrum,
    /// `Σ_j s_j conj(ẑ_j) ẑ_jᵀ + λ₁ I`, per frequency.
    pub den: GramStack,
}

/// Closed-form terms for one frame's context set and label.
pub fn train_filter_frame(
    cs: &ContextSet,
    label: &Spectrum,
    lambda1: f64,
    lambda2: f64,
) -> Result<FrameTerms> {
    check_lambdas(lambda1, lambda2)?;
    let (w, h, c) = cs.shape();
    if label.shape() != (w, h, 1) {
        return Err(Error::Dimension(format!(
            "label spectrum {:?} does not match template {:?}",
            label.shape(),
            cs.shape()
        )));
    }
    let z0 = fft2d(&cs.target)?;
    let mut num = Spectrum::zeros(w, h, c);
    for bin in 0..z0.bins() {
        let y = label.bin(bin)[0];
        for (n, z) in num.bin_mut(bin).iter_mut().zip(z0.bin(bin)) {
            *n = z.conj() * y;
        }
    }
    let mut den = GramStack::zeros(w * h, c);
    den.add_outer(&z0, 1.0);
    if lambda2 > 0.0 {
        for ctx in &cs.contexts {
            den.add_outer(&fft2d(ctx)?, lambda2);
        }
    }
    den.add_diagonal(lambda1);
    Ok(FrameTerms { num, den })
}

fn check_lambdas(lambda1: f64, lambda2: f64) -> Result<()> {
    if !(lambda1 > 0.0) || !lambda1.is_finite() {
        return Err(Error::Parameter(format!(
            "lambda1 must be > 0, got {lambda1}"
        )));
    }
    if !(lambda2 >= 0.0) || !lambda2.is_finite() {
        return Err(Error::Parameter(format!(
            "lambda2 must be >= 0, got {lambda2}"
        )));
    }
    Ok(())
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Parameter(format!(
            "update rate must lie in [0, 1], got {eta}"
        )));
    }
    Ok(())
}

/// Solves `den · v = num` at every frequency.
pub fn solve_filter(num: &Spectrum, den: &GramStack) -> Result<Spectrum> {
    let (w, h, c) = num.shape();
    if den.channels() != c || den.bins() != w * h {
        return Err(Error::Dimension(format!(
            "denominator {}x{c}x{c} does not match numerator {:?}",
            den.bins(),
            num.shape()
        )));
    }
    let mut out = Spectrum::zeros(w, h, c);
    for bin in 0..w * h {
        let v = if c == 1 {
            vec![num.bin(bin)[0] / den.data()[bin]]
        } else {
            let m = den.matrix(bin);
            let b = DVector::from_column_slice(num.bin(bin));
            let x = match m.clone().cholesky() {
                Some(ch) => ch.solve(&b),
                None => m.lu().solve(&b).ok_or_else(|| {
                    Error::Invariant(format!("singular filter system at bin {bin}"))
                })?,
            };
            x.iter().copied().collect()
        };
        out.bin_mut(bin).copy_from_slice(&v);
    }
    Ok(out)
}

/// Temporally accumulated filter.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterModel {
    pub num: Spectrum,
    pub den: GramStack,
    pub lambda1: f64,
    pub lambda2: f64,
    pub eta: f64,
    pub frame_count: usize,
    filter: Spectrum,
}

impl FilterModel {
    /// Model holding exactly one frame's terms.
    pub fn from_frame(terms: FrameTerms, lambda1: f64, lambda2: f64, eta: f64) -> Result<Self> {
        check_lambdas(lambda1, lambda2)?;
        check_eta(eta)?;
        let filter = solve_filter(&terms.num, &terms.den)?;
        Ok(FilterModel {
            num: terms.num,
            den: terms.den,
            lambda1,
            lambda2,
            eta,
            frame_count: 1,
            filter,
        })
    }

    /// Trains a single-frame model directly from a context set.
    pub fn train(
        cs: &ContextSet,
        label: &Spectrum,
        lambda1: f64,
        lambda2: f64,
        eta: f64,
    ) -> Result<Self> {
        Self::from_frame(
            train_filter_frame(cs, label, lambda1, lambda2)?,
            lambda1,
            lambda2,
            eta,
        )
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.num.shape()
    }

    /// Solved per-frequency filter `v`.
    pub fn filter(&self) -> &Spectrum {
        &self.filter
    }

    /// Blends in a new frame: `A ← (1−η)A + η Aₜ`, `B ← (1−η)B + η Bₜ`.
    pub fn update(&mut self, terms: &FrameTerms) -> Result<()> {
        self.update_with_rate(terms, self.eta)
    }

    pub fn update_with_rate(&mut self, terms: &FrameTerms, eta: f64) -> Result<()> {
        check_eta(eta)?;
        if terms.num.shape() != self.num.shape() || terms.den.data.len() != self.den.data.len() {
            return Err(Error::Dimension(format!(
                "frame terms {:?} do not match model {:?}",
                terms.num.shape(),
                self.num.shape()
            )));
        }
        let keep = 1.0 - eta;
        for (a, b) in self.num.data_mut().iter_mut().zip(terms.num.data()) {
            *a = *a * keep + *b * eta;
        }
        for (a, b) in self.den.data.iter_mut().zip(&terms.den.data) {
            *a = *a * keep + *b * eta;
        }
        self.frame_count += 1;
        self.filter = solve_filter(&self.num, &self.den)?;
        Ok(())
    }

    /// Smallest eigenvalue of `den − λ₁I` over all frequencies; non-negative
    /// up to rounding for any update sequence.
    pub fn min_excess_eigenvalue(&self) -> f64 {
        let mut lo = f64::INFINITY;
        for bin in 0..self.den.bins() {
            let m = self.den.matrix(bin);
            let eig = m.symmetric_eigenvalues();
            for e in eig.iter() {
                lo = lo.min(e - self.lambda1);
            }
        }
        lo
    }

    /// Writes the model as a RAFT container plus JSON manifest.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (w, h, c) = self.shape();
        let num = Tensor3::from_fn(w, h, 2 * c, |x, y, k| {
            let z = self.num.get(x, y, k / 2);
            if k % 2 == 0 {
                z.re
            } else {
                z.im
            }
        });
        let cc = c * c;
        let den = Tensor3::from_fn(w, h, 2 * cc, |x, y, k| {
            let z = self.den.data[(y * w + x) * cc + k / 2];
            if k % 2 == 0 {
                z.re
            } else {
                z.im
            }
        });
        raft::write_tensors(path, &[num.clone(), den.clone()])?;
        let mut meta = serde_json::Map::new();
        meta.insert("lambda1".into(), self.lambda1.into());
        meta.insert("lambda2".into(), self.lambda2.into());
        meta.insert("eta".into(), self.eta.into());
        meta.insert("frame_count".into(), self.frame_count.into());
        Manifest {
            kind: "filter".into(),
            tensors: vec![
                ManifestEntry {
                    name: "num".into(),
                    role: "numerator re/im interleaved".into(),
                    shape: vec![w, h, 2 * c],
                },
                ManifestEntry {
                    name: "den".into(),
                    role: "per-frequency gram matrix re/im interleaved".into(),
                    shape: vec![w, h, 2 * cc],
                },
            ],
            meta,
        }
        .save(raft::manifest_path(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest = Manifest::load(raft::manifest_path(path))?;
        if manifest.kind != "filter" {
            return Err(Error::Parse(format!(
                "manifest kind {:?} is not a filter",
                manifest.kind
            )));
        }
        let scalar = |key: &str| -> Result<f64> {
            manifest
                .meta
                .get(key)
                .and_then(|v| v.as_f64())
                .ok_or_else(|| Error::Parse(format!("filter manifest lacks {key}")))
        };
        let tensors = raft::read_tensors(path)?;
        let [num, den] = <[Tensor3; 2]>::try_from(tensors).map_err(|t| {
            Error::Parse(format!("filter file holds {} tensors, expected 2", t.len()))
        })?;
        let (w, h, c2) = num.shape();
        let c = c2 / 2;
        if c2 % 2 != 0 || den.shape() != (w, h, 2 * c * c) {
            return Err(Error::Parse(format!(
                "inconsistent filter tensors {:?} and {:?}",
                num.shape(),
                den.shape()
            )));
        }
        let pairs = |t: &Tensor3| -> Vec<Complex64> {
            t.data()
                .chunks_exact(2)
                .map(|p| Complex64::new(p[0], p[1]))
                .collect()
        };
        let num = Spectrum::from_vec(w, h, c, pairs(&num))?;
        let den = GramStack {
            channels: c,
            data: pairs(&den),
        };
        let filter = solve_filter(&num, &den)?;
        Ok(FilterModel {
            num,
            den,
            lambda1: scalar("lambda1")?,
            lambda2: scalar("lambda2")?,
            eta: scalar("eta")?,
            frame_count: scalar("frame_count")? as usize,
            filter,
        })
    }
}

/// Functional form of [`FilterModel::update`].
pub fn update_filter(model: &FilterModel, terms: &FrameTerms) -> Result<FilterModel> {
    let mut next = model.clone();
    next.update(terms)?;
    Ok(next)
}

/// Correlation response plane and its peak.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseMap {
    pub plane: Tensor3,
    pub peak_value: f64,
    pub peak_pos: (usize, usize),
    pub subpixel_offset: (f64, f64),
}

impl ResponseMap {
    /// Locates the peak of an arbitrary `W×H×1` plane.
    pub fn from_plane(plane: Tensor3) -> Result<Self> {
        let (w, h, c) = plane.shape();
        if c != 1 || plane.is_empty() {
            return Err(Error::Dimension(format!(
                "response plane must be WxHx1, got {:?}",
                plane.shape()
            )));
        }
        let mut best: Option<((usize, usize), f64, f64)> = None;
        for y in 0..h {
            for x in 0..w {
                let v = plane.get(x, y, 0);
                let (dx, dy) = circular_displacement((x, y), (w, h));
                let mag = (dx * dx + dy * dy) as f64;
                let better = match best {
                    None => true,
                    Some((_, bv, bm)) => v > bv || (v == bv && mag < bm),
                };
                if better {
                    best = Some(((x, y), v, mag));
                }
            }
        }
        let ((px, py), peak_value, _) = best.expect("plane is non-empty");
        let at = |x: usize, y: usize| plane.get(x % w, y % h, 0);
        let ox = parabola_offset(at(px + w - 1, py), peak_value, at(px + 1, py));
        let oy = parabola_offset(at(px, py + h - 1), peak_value, at(px, py + 1));
        Ok(ResponseMap {
            plane,
            peak_value,
            peak_pos: (px, py),
            subpixel_offset: (ox, oy),
        })
    }

    /// Peak height between samples. Each axis is fitted with a parabola
    /// through the peak and its two neighbours, in the log domain when all
    /// three samples are positive (exact for a Gaussian peak).
    pub fn peak_height(&self) -> f64 {
        let (w, h, _) = self.plane.shape();
        let (px, py) = self.peak_pos;
        let at = |x: usize, y: usize| self.plane.get(x % w, y % h, 0);
        let c = self.peak_value;
        let axes = [
            (at(px + w - 1, py), at(px + 1, py)),
            (at(px, py + h - 1), at(px, py + 1)),
        ];
        if c > 0.0 && axes.iter().all(|&(l, r)| l > 0.0 && r > 0.0) {
            let lc = c.ln();
            let gain: f64 = axes
                .iter()
                .map(|&(l, r)| vertex_gain(l.ln(), lc, r.ln()))
                .sum();
            (lc + gain).exp()
        } else {
            c + axes.iter().map(|&(l, r)| vertex_gain(l, c, r)).sum::<f64>()
        }
    }
}

/// Rise of the parabola through `(-1, l)`, `(0, c)`, `(1, r)` from `c` to
/// its (clamped) vertex.
fn vertex_gain(l: f64, c: f64, r: f64) -> f64 {
    (r - l) * parabola_offset(l, c, r) / 4.0
}

fn circular_displacement(pos: (usize, usize), size: (usize, usize)) -> (isize, isize) {
    let fold = |p: usize, n: usize| {
        let p = p as isize;
        if p > n as isize / 2 {
            p - n as isize
        } else {
            p
        }
    };
    (fold(pos.0, size.0), fold(pos.1, size.1))
}

/// Vertex of the parabola through `(-1, l)`, `(0, c)`, `(1, r)`, clamped to `±0.5`.
pub fn parabola_offset(l: f64, c: f64, r: f64) -> f64 {
    let denom = l - 2.0 * c + r;
    if denom.abs() < 1e-12 || !denom.is_finite() {
        return 0.0;
    }
    (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
}

/// Raw response plane `g = F⁻¹(Σ_c v_c x̂_c)`.
pub fn response_plane(filter: &Spectrum, x: &Tensor3) -> Result<Tensor3> {
    if filter.shape() != x.shape() {
        return Err(Error::Dimension(format!(
            "probe {:?} does not match filter {:?}",
            x.shape(),
            filter.shape()
        )));
    }
    let (w, h, _) = x.shape();
    check_fft_dims(w, h)?;
    let xf = fft2d(x)?;
    let mut g = Spectrum::zeros(w, h, 1);
    for bin in 0..xf.bins() {
        g.bin_mut(bin)[0] = filter
            .bin(bin)
            .iter()
            .zip(xf.bin(bin))
            .map(|(v, x)| v * x)
            .sum();
    }
    let (plane, residue) = ifft2d_with_residue(&g)?;
    let scale = plane.max_abs().max(1.0);
    if residue > RESIDUE_TOL * scale {
        return Err(Error::Invariant(format!(
            "response has imaginary residue {residue:e}"
        )));
    }
    Ok(plane)
}

/// Correlates the model with probe features.
pub fn response(model: &FilterModel, x: &Tensor3) -> Result<ResponseMap> {
    ResponseMap::from_plane(response_plane(&model.filter, x)?)
}

/// Subpixel displacement of the peak from the response origin, in feature
/// cells, plus the peak value as confidence.
pub fn locate(r: &ResponseMap) -> ((f64, f64), f64) {
    let (dx, dy) = circular_displacement(r.peak_pos, (r.plane.width(), r.plane.height()));
    (
        (
            dx as f64 + r.subpixel_offset.0,
            dy as f64 + r.subpixel_offset.1,
        ),
        r.peak_value,
    )
}
