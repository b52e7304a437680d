//! Deterministic synthetic sequences: a textured square over a smooth
//! value-noise background, with exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::otb::{image_to_otb, Attribute, RectFormat, SequenceSpec};
use crate::error::{Error, Result};
use crate::features::ImageFrame;
use crate::geometry::Rect;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Static,
    Translate,
    Zoom,
    Occlude,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(SynthKind::Static),
            "translate" => Ok(SynthKind::Translate),
            "zoom" => Ok(SynthKind::Zoom),
            "occlude" => Ok(SynthKind::Occlude),
            _ => Err(Error::Config(format!(
                "unknown synthetic kind {s:?} (static, translate, zoom, occlude)"
            ))),
        }
    }
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Static => "static",
            SynthKind::Translate => "translate",
            SynthKind::Zoom => "zoom",
            SynthKind::Occlude => "occlude",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub width: usize,
    pub height: usize,
    /// Initial side of the square, pixels.
    pub size: f64,
    /// Per-frame motion for the translate and occlude kinds, pixels.
    pub velocity: (f64, f64),
    /// Per-frame side multiplier for the zoom kind.
    pub zoom: f64,
    /// Random rectangles painted over the object's base colour.
    pub texture_patches: usize,
    /// Background noise lattice spacing, pixels.
    pub background_scale: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            width: 320,
            height: 240,
            size: 40.0,
            velocity: (2.0, 0.0),
            zoom: 1.005,
            texture_patches: 12,
            background_scale: 24.0,
        }
    }
}

struct Scene {
    lattice: Vec<f64>,
    lattice_w: usize,
    base: [u8; 3],
    /// `(u0, v0, u1, v1, colour)` in object-normalized coordinates.
    patches: Vec<(f64, f64, f64, f64, [u8; 3])>,
    scale: f64,
}

impl Scene {
    fn new(p: &SynthParams, rng: &mut ChaCha8Rng) -> Self {
        let lattice_w = (p.width as f64 / p.background_scale).ceil() as usize + 2;
        let lattice_h = (p.height as f64 / p.background_scale).ceil() as usize + 2;
        let lattice = (0..lattice_w * lattice_h)
            .map(|_| rng.gen_range(70.0..150.0))
            .collect();
        let colour = |rng: &mut ChaCha8Rng| {
            let g: f64 = rng.gen_range(0.0..255.0);
            let tint = rng.gen_range(-20.0..20.0);
            [
                (g + tint).clamp(0.0, 255.0) as u8,
                g as u8,
                (g - tint).clamp(0.0, 255.0) as u8,
            ]
        };
        let base = colour(rng);
        let mut patches = Vec::with_capacity(p.texture_patches);
        for _ in 0..p.texture_patches {
            let c = colour(rng);
            let (w, h) = (rng.gen_range(0.15..0.5), rng.gen_range(0.15..0.5));
            let (u, v) = (rng.gen_range(0.0..1.0 - w), rng.gen_range(0.0..1.0 - h));
            patches.push((u, v, u + w, v + h, c));
        }
        Scene {
            lattice,
            lattice_w,
            base,
            patches,
            scale: p.background_scale,
        }
    }

    fn background(&self, x: f64, y: f64) -> u8 {
        let at = |i: usize, j: usize| self.lattice[j * self.lattice_w + i];
        value_noise(x / self.scale, y / self.scale, at).round() as u8
    }

    /// Renders one frame. Shapes are composited with exact per-pixel area
    /// coverage, so edges are antialiased like a camera image.
    fn render(&self, p: &SynthParams, target: &Rect, occluder: Option<&Rect>) -> ImageFrame {
        let patches: Vec<(Rect, [u8; 3])> = self
            .patches
            .iter()
            .map(|&(u0, v0, u1, v1, c)| {
                let r = Rect::new(
                    target.x + u0 * target.w,
                    target.y + v0 * target.h,
                    (u1 - u0) * target.w,
                    (v1 - v0) * target.h,
                );
                (r, c)
            })
            .collect();
        let blend = |col: &mut [f64; 3], rgb: [u8; 3], a: f64| {
            for (c, v) in col.iter_mut().zip(rgb) {
                *c = *c * (1.0 - a) + v as f64 * a;
            }
        };
        let mut px = Vec::with_capacity(p.width * p.height);
        for y in 0..p.height {
            for x in 0..p.width {
                let g = self.background(x as f64 + 0.5, y as f64 + 0.5) as f64;
                let mut col = [g; 3];
                let a = coverage(x, y, target);
                if a > 0.0 {
                    blend(&mut col, self.base, a);
                    for (r, c) in &patches {
                        let a = coverage(x, y, r);
                        if a > 0.0 {
                            blend(&mut col, *c, a);
                        }
                    }
                }
                if let Some(o) = occluder {
                    let a = coverage(x, y, o);
                    if a > 0.0 {
                        blend(&mut col, [128; 3], a);
                    }
                }
                px.push(col);
            }
        }
        let px = px
            .into_iter()
            .map(|c| c.map(|v| v.round().clamp(0.0, 255.0) as u8))
            .collect();
        ImageFrame::new(p.width, p.height, px).expect("dimensions are non-zero")
    }
}

/// Fraction of pixel `(x, y)` (the unit square at that corner) covered by `r`.
fn coverage(x: usize, y: usize, r: &Rect) -> f64 {
    let span = |p: usize, lo: f64, len: f64| {
        let p = p as f64;
        ((p + 1.0).min(lo + len) - p.max(lo)).max(0.0)
    };
    span(x, r.x, r.w) * span(y, r.y, r.h)
}

/// Smoothstep interpolation of a lattice sampled by `at(i, j)`.
fn value_noise(gx: f64, gy: f64, at: impl Fn(usize, usize) -> f64) -> f64 {
    let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (tx, ty) = (smooth(gx - ix as f64), smooth(gy - iy as f64));
    let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
    let bottom = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Target box of frame `t` in 0-indexed image coordinates.
pub fn synth_target(kind: SynthKind, t: usize, p: &SynthParams) -> Rect {
    let start = Rect::new(
        ((p.width as f64 - p.size) / 2.0).floor(),
        ((p.height as f64 - p.size) / 2.0).floor(),
        p.size,
        p.size,
    );
    let t = t as f64;
    match kind {
        SynthKind::Static => start,
        SynthKind::Translate | SynthKind::Occlude => {
            // start far enough back that the path stays centered in the frame
            let base = start.translate(-p.velocity.0 * 50.0, -p.velocity.1 * 50.0);
            base.translate(p.velocity.0 * t, p.velocity.1 * t)
        }
        SynthKind::Zoom => {
            let (cx, cy) = start.center();
            let side = p.size * p.zoom.powf(t);
            Rect::from_center(cx, cy, side, side)
        }
    }
}

/// Renders `length` frames; ground truth is returned in OTB convention.
pub fn synth_sequence(
    kind: SynthKind,
    length: usize,
    params: &SynthParams,
    seed: u64,
) -> Result<(Vec<ImageFrame>, SequenceSpec)> {
    if length < 2 {
        return Err(Error::Parameter(format!(
            "synthetic sequences need >= 2 frames, got {length}"
        )));
    }
    if params.width < 16 || params.height < 16 || !(params.size >= 4.0) || !(params.zoom > 0.0) {
        return Err(Error::Parameter(format!(
            "invalid synthetic parameters {params:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = Scene::new(params, &mut rng);
    let mut frames = Vec::with_capacity(length);
    let mut gt = Vec::with_capacity(length);
    for t in 0..length {
        let target = synth_target(kind, t, params);
        let occluder = (kind == SynthKind::Occlude && (length / 3..2 * length / 3).contains(&t))
            .then(|| {
                // covers the left half of the target
                Rect::new(
                    target.x - 4.0,
                    target.y - 4.0,
                    target.w / 2.0 + 4.0,
                    target.h + 8.0,
                )
            });
        frames.push(scene.render(params, &target, occluder.as_ref()));
        gt.push(image_to_otb(&target));
    }
    let attributes = match kind {
        SynthKind::Static => vec![],
        SynthKind::Translate => vec![Attribute::FM],
        SynthKind::Zoom => vec![Attribute::SV],
        SynthKind::Occlude => vec![Attribute::OCC],
    };
    let frame_names = (1..=length)
        .map(|i| format!("img/{i:04}.png").into())
        .collect();
    Ok((
        frames,
        SequenceSpec {
            name: kind.name().to_string(),
            frames: frame_names,
            groundtruth: gt,
            attributes,
            format: RectFormat {
                trailing_newline: true,
                ..RectFormat::default()
            },
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_rects_identical() {
        let (frames, spec) =
            synth_sequence(SynthKind::Static, 4, &SynthParams::default(), 1).unwrap();
        assert!(spec.groundtruth.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(frames[0], frames[3]);
    }

    #[test]
    fn translate_is_arithmetic() {
        let (_, spec) =
            synth_sequence(SynthKind::Translate, 6, &SynthParams::default(), 2).unwrap();
        for w in spec.groundtruth.windows(2) {
            assert_eq!(w[1].x - w[0].x, 2.0);
            assert_eq!(w[1].y, w[0].y);
        }
    }

    #[test]
    fn zoom_is_geometric() {
        let (_, spec) = synth_sequence(SynthKind::Zoom, 20, &SynthParams::default(), 3).unwrap();
        for w in spec.groundtruth.windows(2) {
            assert!((w[1].w / w[0].w - 1.005).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_and_seeded() {
        let a = synth_sequence(SynthKind::Occlude, 3, &SynthParams::default(), 9).unwrap();
        let b = synth_sequence(SynthKind::Occlude, 3, &SynthParams::default(), 9).unwrap();
        let c = synth_sequence(SynthKind::Occlude, 3, &SynthParams::default(), 10).unwrap();
        assert_eq!(a.0, b.0);
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn too_short() {
        assert!(synth_sequence(SynthKind::Static, 1, &SynthParams::default(), 0).is_err());
    }
}
