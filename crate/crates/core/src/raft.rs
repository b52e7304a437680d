//! RAFT tensor container.
//!
//! Layout (little-endian): magic `b"RAFT"`, `u8` version (1), `u8` tensor
//! count, then per tensor `u32` width, `u32` height, `u32` channels followed by
//! `width·height·channels` `f32` values in row-major, channel-last order.
//!
//! Checkpoints pair a container with a JSON manifest that names each tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeaturePyramid;
use crate::math::Tensor3;

pub const MAGIC: &[u8; 4] = b"RAFT";
pub const VERSION: u8 = 1;

pub fn encode(tensors: &[Tensor3]) -> Result<Vec<u8>> {
    if tensors.len() > u8::MAX as usize {
        return Err(Error::Parameter(format!(
            "{} tensors exceed the u8 count field",
            tensors.len()
        )));
    }
    let payload: usize = tensors.iter().map(|t| 12 + 4 * t.len()).sum();
    let mut out = Vec::with_capacity(6 + payload);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(tensors.len() as u8);
    for t in tensors {
        let (w, h, c) = t.shape();
        for dim in [w, h, c] {
            let dim = u32::try_from(dim)
                .map_err(|_| Error::Parameter(format!("dimension {dim} exceeds u32")))?;
            out.extend_from_slice(&dim.to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(Error::Parse(format!(
                "truncated RAFT data: {what} needs {n} bytes at offset {}, only {available} remain ({} missing)",
                self.pos,
                n - available
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Tensor3>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Parse(format!(
            "bad magic {magic:?}, expected \"RAFT\""
        )));
    }
    let version = r.take(1, "version")?[0];
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported RAFT version {version}")));
    }
    let count = r.take(1, "tensor count")?[0] as usize;
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let w = r.u32(&format!("tensor {i} width"))? as usize;
        let h = r.u32(&format!("tensor {i} height"))? as usize;
        let c = r.u32(&format!("tensor {i} channels"))? as usize;
        let n = w
            .checked_mul(h)
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| Error::Parse(format!("tensor {i} shape overflows")))?;
        let raw = r.take(4 * n, &format!("tensor {i} data"))?;
        let mut data = Vec::with_capacity(n);
        for chunk in raw.chunks_exact(4) {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "tensor {i} contains non-finite value {v}"
                )));
            }
            data.push(v as f64);
        }
        tensors.push(Tensor3::from_vec(w, h, c, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(tensors)
}

pub fn write_tensors(path: impl AsRef<Path>, tensors: &[Tensor3]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(tensors)?).map_err(|e| Error::io(path, e))
}

pub fn read_tensors(path: impl AsRef<Path>) -> Result<Vec<Tensor3>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn save_feature_file(path: impl AsRef<Path>, pyramid: &FeaturePyramid) -> Result<()> {
    write_tensors(path, pyramid.levels())
}

/// Reads a precomputed pyramid and checks the equal-resolution invariant.
pub fn load_feature_file(path: impl AsRef<Path>) -> Result<FeaturePyramid> {
    FeaturePyramid::new(read_tensors(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub role: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub tensors: Vec<ManifestEntry>,
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl Manifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Manifest path that accompanies a `.raft` file (`x.raft` → `x.json`).
pub fn manifest_path(raft: &Path) -> std::path::PathBuf {
    raft.with_extension("json")
}

/// Stores each value as an `f32` pair `(hi, lo)` with `hi + lo ≈ v` to
/// roughly 48 bits, one `len×1×2` tensor per named buffer.
pub fn save_named<'a>(
    path: impl AsRef<Path>,
    kind: &str,
    entries: impl IntoIterator<Item = (String, Vec<usize>, &'a [f64])>,
    meta: serde_json::Map<String, serde_json::Value>,
) -> Result<()> {
    let path = path.as_ref();
    let mut tensors = Vec::new();
    let mut manifest = Manifest {
        kind: kind.to_string(),
        tensors: Vec::new(),
        meta,
    };
    for (name, shape, data) in entries {
        let mut packed = Vec::with_capacity(2 * data.len());
        for &v in data {
            let hi = v as f32;
            packed.push(hi as f64);
            packed.push((v - hi as f64) as f32 as f64);
        }
        tensors.push(Tensor3::from_vec(
            data.len().max(1),
            1,
            2,
            if data.is_empty() {
                vec![0.0; 2]
            } else {
                packed
            },
        )?);
        manifest.tensors.push(ManifestEntry {
            name,
            role: "f32 hi/lo pair".into(),
            shape,
        });
    }
    write_tensors(path, &tensors)?;
    manifest.save(manifest_path(path))
}

/// Named flat buffers in file order.
pub type NamedBuffers = Vec<(String, Vec<f64>)>;

/// Inverse of [`save_named`]: the manifest plus `(name, values)` in file order.
pub fn load_named(path: impl AsRef<Path>) -> Result<(Manifest, NamedBuffers)> {
    let path = path.as_ref();
    let manifest = Manifest::load(manifest_path(path))?;
    let tensors = read_tensors(path)?;
    if tensors.len() != manifest.tensors.len() {
        return Err(Error::Parse(format!(
            "{}: manifest lists {} tensors, file holds {}",
            path.display(),
            manifest.tensors.len(),
            tensors.len()
        )));
    }
    let mut out = Vec::with_capacity(tensors.len());
    for (entry, t) in manifest.tensors.iter().zip(&tensors) {
        let expected: usize = entry.shape.iter().product();
        if t.channels() != 2 || t.height() != 1 || t.width() != expected.max(1) {
            return Err(Error::Parse(format!(
                "{}: tensor {} has shape {:?}, manifest says {:?}",
                path.display(),
                entry.name,
                t.shape(),
                entry.shape
            )));
        }
        let values = t
            .data()
            .chunks_exact(2)
            .take(expected)
            .map(|p| p[0] + p[1])
            .collect();
        out.push((entry.name.clone(), values));
    }
    Ok((manifest, out))
}

#[cfg(test)]
mod tests {
    #[test]
    fn named_round_trip_keeps_f64_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.raft");
        let a = [1.0 / 3.0, -2.5e-7, 12345.678901234];
        let b = vec![std::f64::consts::PI];
        save_named(
            &path,
            "test",
            vec![
                ("a".to_string(), vec![3], &a[..]),
                ("b".to_string(), vec![1, 1], &b[..]),
            ],
            serde_json::Map::new(),
        )
        .unwrap();
        let (m, got) = load_named(&path).unwrap();
        assert_eq!(m.kind, "test");
        assert_eq!(got[0].0, "a");
        for (x, y) in got[0].1.iter().chain(&got[1].1).zip(a.iter().chain(&b)) {
            assert!((x - y).abs() <= 1e-13 * y.abs());
        }
    }

    use super::*;

    fn sample() -> Vec<Tensor3> {
        vec![
            Tensor3::from_fn(4, 4, 2, |x, y, c| (x as f64 - y as f64) * 0.5 + c as f64),
            Tensor3::from_fn(4, 4, 3, |x, y, c| (x * y + c) as f64 * 0.25),
        ]
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"RAFT");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 2);
        assert_eq!(&bytes[6..10], &4u32.to_le_bytes());
        assert_eq!(&bytes[14..18], &2u32.to_le_bytes());
        assert_eq!(bytes.len(), 6 + 12 + 4 * 32 + 12 + 4 * 48);
        assert_eq!(decode(&bytes).unwrap(), sample());
    }

    #[test]
    fn truncation_reports_missing_bytes() {
        let bytes = encode(&sample()).unwrap();
        let cut = &bytes[..bytes.len() - 10];
        match decode(cut) {
            Err(Error::Parse(msg)) => assert!(msg.contains("10 missing"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode(&sample()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Parse(m)) if m.contains("magic")));
        let mut bytes = encode(&sample()).unwrap();
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(Error::Parse(m)) if m.contains("version")));
    }

    #[test]
    fn non_finite_is_data_error() {
        let mut bytes = encode(&sample()).unwrap();
        bytes[18..22].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::Data(_))));
    }
}
