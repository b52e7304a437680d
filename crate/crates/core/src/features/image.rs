use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit RGB frame, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageFrame {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl ImageFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Parameter(format!("empty {width}x{height} frame")));
        }
        if pixels.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} frame needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(ImageFrame {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, vec![rgb; width * height])
    }

    pub fn from_gray(width: usize, height: usize, gray: &[u8]) -> Result<Self> {
        Self::new(width, height, gray.iter().map(|&g| [g, g, g]).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }

    /// Channel mean in `[0, 1]`.
    #[inline]
    pub fn intensity(&self, x: usize, y: usize) -> f64 {
        let [r, g, b] = self.get(x, y);
        (r as f64 + g as f64 + b as f64) / (3.0 * 255.0)
    }

    /// Decodes PNG/JPEG through the `image` crate and PGM/PPM natively.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("pgm") | Some("ppm") | Some("pnm") => {
                let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
                decode_pnm(&bytes).map_err(|message| Error::Image {
                    path: path.to_path_buf(),
                    message,
                })
            }
            _ => {
                let img = image::open(path).map_err(|e| Error::Image {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })?;
                let rgb = img.to_rgb8();
                let (w, h) = rgb.dimensions();
                let pixels = rgb.pixels().map(|p| p.0).collect();
                Self::new(w as usize, h as usize, pixels)
            }
        }
    }

    /// Writes PNG, or binary PPM/PGM when the extension asks for it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("ppm") | Some("pgm") => {
                let gray = ext.as_deref() == Some("pgm");
                fs::write(path, self.encode_pnm(gray)).map_err(|e| Error::io(path, e))
            }
            _ => {
                let raw: Vec<u8> = self.pixels.iter().flatten().copied().collect();
                let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
                    .expect("buffer length matches dimensions");
                buf.save(path).map_err(|e| Error::Image {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })
            }
        }
    }

    pub fn encode_pnm(&self, gray: bool) -> Vec<u8> {
        let magic = if gray { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        for p in &self.pixels {
            if gray {
                let g = (p[0] as u32 + p[1] as u32 + p[2] as u32 + 1) / 3;
                out.push(g as u8);
            } else {
                out.extend_from_slice(p);
            }
        }
        out
    }
}

/// Parses binary (P5/P6) and ASCII (P2/P3) netpbm images with maxval ≤ 255.
pub fn decode_pnm(bytes: &[u8]) -> std::result::Result<ImageFrame, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("unexpected end of header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let num = |s: String| {
        s.parse::<usize>()
            .map_err(|_| format!("bad header number `{s}`"))
    };
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    let scale = |v: usize| ((v * 255 + maxval / 2) / maxval) as u8;
    let n = width * height;
    let pixels: Vec<[u8; 3]> = match magic.as_str() {
        "P5" | "P6" => {
            let body = &bytes[pos + 1..];
            let per = if magic == "P5" { 1 } else { 3 };
            if body.len() < n * per {
                return Err(format!(
                    "pixel data truncated: need {} bytes, have {}",
                    n * per,
                    body.len()
                ));
            }
            body.chunks_exact(per)
                .take(n)
                .map(|c| {
                    if per == 1 {
                        let g = scale(c[0] as usize);
                        [g, g, g]
                    } else {
                        [
                            scale(c[0] as usize),
                            scale(c[1] as usize),
                            scale(c[2] as usize),
                        ]
                    }
                })
                .collect()
        }
        "P2" | "P3" => {
            let per = if magic == "P2" { 1 } else { 3 };
            let mut vals = Vec::with_capacity(n * per);
            for _ in 0..n * per {
                vals.push(scale(num(token()?)?));
            }
            vals.chunks_exact(per)
                .map(|c| {
                    if per == 1 {
                        [c[0]; 3]
                    } else {
                        [c[0], c[1], c[2]]
                    }
                })
                .collect()
        }
        other => return Err(format!("unsupported netpbm magic `{other}`")),
    };
    ImageFrame::new(width, height, pixels).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_and_binary_pnm_agree() {
        let ascii = b"P2\n# comment\n3 2\n255\n0 10 20\n30 40 255\n";
        let a = decode_pnm(ascii).unwrap();
        let binary = a.encode_pnm(true);
        let b = decode_pnm(&binary).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.get(2, 1), [255, 255, 255]);
        assert_eq!(a.get(1, 0), [10, 10, 10]);
    }

    #[test]
    fn ppm_roundtrip() {
        let f = ImageFrame::new(2, 1, vec![[1, 2, 3], [250, 128, 0]]).unwrap();
        assert_eq!(decode_pnm(&f.encode_pnm(false)).unwrap(), f);
    }

    #[test]
    fn truncated_pnm_is_error() {
        assert!(decode_pnm(b"P5\n4 4\n255\n\x00\x01").is_err());
    }

    #[test]
    fn empty_frame_rejected() {
        assert!(ImageFrame::new(0, 3, vec![]).is_err());
    }
}
