use super::image::ImageFrame;
use crate::error::{Error, Result};
use crate::geometry::Rect;

/// Crops the square context region around `bbox` and resamples it to
/// `out_size × out_size`.
///
/// The region side is `max(w, h) · (1 + padding_factor)`, centred on the box
/// centre. Samples outside the frame replicate the nearest border pixel.
pub fn extract_patch(
    frame: &ImageFrame,
    bbox: &Rect,
    padding_factor: f64,
    out_size: usize,
) -> Result<ImageFrame> {
    if !(bbox.w >= 1.0 && bbox.h >= 1.0) || !bbox.is_valid() {
        return Err(Error::Parameter(format!(
            "bounding box {}x{} is degenerate",
            bbox.w, bbox.h
        )));
    }
    if padding_factor < 0.0 || !padding_factor.is_finite() {
        return Err(Error::Parameter(format!(
            "padding factor {padding_factor} must be >= 0"
        )));
    }
    let side = bbox.w.max(bbox.h) * (1.0 + padding_factor);
    let (cx, cy) = bbox.center();
    resample_square(frame, (cx, cy), side, out_size)
}

/// Bilinear resampling of the `side`-wide square centred at `center`.
///
/// Output pixel `u` samples source coordinate `cx - side/2 + (u + 0.5)·side/out - 0.5`,
/// i.e. pixel centres map to pixel centres.
pub fn resample_square(
    frame: &ImageFrame,
    center: (f64, f64),
    side: f64,
    out_size: usize,
) -> Result<ImageFrame> {
    if out_size == 0 || !(side > 0.0) || !side.is_finite() {
        return Err(Error::Parameter(format!(
            "cannot resample side {side} to {out_size}px"
        )));
    }
    let step = side / out_size as f64;
    let x0 = center.0 - side / 2.0 - 0.5;
    let y0 = center.1 - side / 2.0 - 0.5;
    let (w, h) = (frame.width(), frame.height());
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;

    let mut pixels = Vec::with_capacity(out_size * out_size);
    for v in 0..out_size {
        let fy = (y0 + (v as f64 + 0.5) * step).clamp(0.0, max_y);
        let ya = fy.floor() as usize;
        let yb = (ya + 1).min(h - 1);
        let ty = fy - ya as f64;
        for u in 0..out_size {
            let fx = (x0 + (u as f64 + 0.5) * step).clamp(0.0, max_x);
            let xa = fx.floor() as usize;
            let xb = (xa + 1).min(w - 1);
            let tx = fx - xa as f64;
            let (p00, p10, p01, p11) = (
                frame.get(xa, ya),
                frame.get(xb, ya),
                frame.get(xa, yb),
                frame.get(xb, yb),
            );
            let mut rgb = [0u8; 3];
            for ch in 0..3 {
                let top = p00[ch] as f64 * (1.0 - tx) + p10[ch] as f64 * tx;
                let bottom = p01[ch] as f64 * (1.0 - tx) + p11[ch] as f64 * tx;
                rgb[ch] = (top * (1.0 - ty) + bottom * ty).round().clamp(0.0, 255.0) as u8;
            }
            pixels.push(rgb);
        }
    }
    ImageFrame::new(out_size, out_size, pixels)
}
