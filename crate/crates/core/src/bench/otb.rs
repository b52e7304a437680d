//! OTB-layout sequences: `img/####.jpg`, `groundtruth_rect.txt` and an
//! optional `attributes.txt`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::ImageFrame;
use crate::geometry::Rect;

pub const GROUNDTRUTH_FILE: &str = "groundtruth_rect.txt";
pub const ATTRIBUTES_FILE: &str = "attributes.txt";
pub const IMAGE_DIR: &str = "img";

const IMAGE_EXTENSIONS: [&str; 6] = ["jpg", "jpeg", "png", "pgm", "ppm", "pnm"];

/// Challenge attributes annotated per sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Attribute {
    IV,
    OPR,
    SV,
    OCC,
    DEF,
    MB,
    FM,
    IPR,
    OV,
    BC,
    LR,
}

impl Attribute {
    pub const ALL: [Attribute; 11] = [
        Attribute::IV,
        Attribute::OPR,
        Attribute::SV,
        Attribute::OCC,
        Attribute::DEF,
        Attribute::MB,
        Attribute::FM,
        Attribute::IPR,
        Attribute::OV,
        Attribute::BC,
        Attribute::LR,
    ];
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Parse(format!("unknown attribute tag {s:?}")))
    }
}

/// How ground-truth values were separated on disk, kept so the file can be
/// written back in its original style.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Separator {
    #[default]
    Comma,
    Tab,
    Whitespace,
}

impl Separator {
    fn as_str(self) -> &'static str {
        match self {
            Separator::Comma => ",",
            Separator::Tab => "\t",
            Separator::Whitespace => " ",
        }
    }
}

/// Text layout of a ground-truth file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RectFormat {
    pub separator: Separator,
    pub crlf: bool,
    pub trailing_newline: bool,
}

/// One annotated sequence. Rects use the OTB convention: 1-indexed pixel
/// coordinates of the top-left corner. Absent targets are NaN rects.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSpec {
    pub name: String,
    pub frames: Vec<PathBuf>,
    pub groundtruth: Vec<Rect>,
    pub attributes: Vec<Attribute>,
    pub format: RectFormat,
}

impl SequenceSpec {
    pub fn len(&self) -> usize {
        self.groundtruth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groundtruth.is_empty()
    }
}

/// OTB rect (1-indexed) to continuous 0-indexed image coordinates.
pub fn otb_to_image(r: &Rect) -> Rect {
    r.translate(-1.0, -1.0)
}

/// Continuous 0-indexed image coordinates to an OTB rect.
pub fn image_to_otb(r: &Rect) -> Rect {
    r.translate(1.0, 1.0)
}

fn detect_separator(line: &str) -> Separator {
    if line.contains(',') {
        Separator::Comma
    } else if line.contains('\t') {
        Separator::Tab
    } else {
        Separator::Whitespace
    }
}

/// Parses rect lines separated by commas, tabs or spaces. Errors cite the
/// 1-based line number.
pub fn parse_rects(text: &str) -> Result<(Vec<Rect>, RectFormat)> {
    let mut format = RectFormat {
        crlf: text.contains("\r\n"),
        trailing_newline: text.ends_with('\n'),
        ..RectFormat::default()
    };
    let mut rects = Vec::new();
    let mut seen_sep = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        if !seen_sep {
            format.separator = detect_separator(line);
            seen_sep = true;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() != 4 {
            return Err(Error::Parse(format!(
                "line {lineno}: expected 4 values, found {} in {line:?}",
                fields.len()
            )));
        }
        let mut v = [0.0; 4];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("line {lineno}: {f:?} is not a number")))?;
        }
        let r = Rect::new(v[0], v[1], v[2], v[3]);
        if v.iter().all(|x| x.is_finite()) && (r.w < 0.0 || r.h < 0.0) {
            return Err(Error::Parse(format!(
                "line {lineno}: negative extent in {line:?}"
            )));
        }
        rects.push(r);
    }
    Ok((rects, format))
}

/// Inverse of [`parse_rects`]; byte-identical for files whose numbers are in
/// shortest round-trip form.
pub fn format_rects(rects: &[Rect], format: &RectFormat) -> String {
    let nl = if format.crlf { "\r\n" } else { "\n" };
    let sep = format.separator.as_str();
    let lines: Vec<String> = rects
        .iter()
        .map(|r| {
            [r.x, r.y, r.w, r.h]
                .iter()
                .map(|v| {
                    if v.is_nan() {
                        "NaN".to_string()
                    } else {
                        v.to_string()
                    }
                })
                .collect::<Vec<_>>()
                .join(sep)
        })
        .collect();
    let mut out = lines.join(nl);
    if format.trailing_newline && !rects.is_empty() {
        out.push_str(nl);
    }
    out
}

pub fn read_rects(path: impl AsRef<Path>) -> Result<(Vec<Rect>, RectFormat)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rects(&text).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_rects(path: impl AsRef<Path>, rects: &[Rect], format: &RectFormat) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_rects(rects, format)).map_err(|e| Error::io(path, e))
}

fn parse_attributes(text: &str) -> Result<Vec<Attribute>> {
    let mut out: Vec<Attribute> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(Attribute::from_str)
        .collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        if IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            frames.push(path);
        }
    }
    frames.sort();
    Ok(frames)
}

/// Reads an OTB sequence directory.
pub fn load_otb_sequence(dir: impl AsRef<Path>) -> Result<SequenceSpec> {
    let dir = dir.as_ref();
    let (groundtruth, format) = read_rects(dir.join(GROUNDTRUTH_FILE))?;
    let frames = list_images(&dir.join(IMAGE_DIR))?;
    if frames.len() != groundtruth.len() {
        return Err(Error::Data(format!(
            "{}: {} images but {} ground-truth rects",
            dir.display(),
            frames.len(),
            groundtruth.len()
        )));
    }
    if groundtruth.is_empty() {
        return Err(Error::Data(format!("{}: empty sequence", dir.display())));
    }
    let attr_path = dir.join(ATTRIBUTES_FILE);
    let attributes = if attr_path.exists() {
        let text = fs::read_to_string(&attr_path).map_err(|e| Error::io(&attr_path, e))?;
        parse_attributes(&text)?
    } else {
        Vec::new()
    };
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".into());
    Ok(SequenceSpec {
        name,
        frames,
        groundtruth,
        attributes,
        format,
    })
}

/// Writes frames and annotations in OTB layout under `dir`; frames become
/// `img/0001.png`, ... and `spec.frames` is ignored.
pub fn write_otb_sequence(
    dir: impl AsRef<Path>,
    frames: &[ImageFrame],
    spec: &SequenceSpec,
) -> Result<SequenceSpec> {
    let dir = dir.as_ref();
    if frames.len() != spec.groundtruth.len() {
        return Err(Error::Data(format!(
            "{} frames but {} ground-truth rects",
            frames.len(),
            spec.groundtruth.len()
        )));
    }
    let img = dir.join(IMAGE_DIR);
    fs::create_dir_all(&img).map_err(|e| Error::io(&img, e))?;
    let mut paths = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let p = img.join(format!("{:04}.png", i + 1));
        f.save(&p)?;
        paths.push(p);
    }
    write_rects(dir.join(GROUNDTRUTH_FILE), &spec.groundtruth, &spec.format)?;
    if !spec.attributes.is_empty() {
        let text = spec
            .attributes
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(",");
        let p = dir.join(ATTRIBUTES_FILE);
        fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))?;
    }
    Ok(SequenceSpec {
        frames: paths,
        ..spec.clone()
    })
}

/// Frames plus annotations, either resident in memory or read on demand.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub spec: SequenceSpec,
    frames: Option<Vec<ImageFrame>>,
}

impl Sequence {
    pub fn in_memory(frames: Vec<ImageFrame>, spec: SequenceSpec) -> Result<Self> {
        if frames.len() != spec.len() {
            return Err(Error::Data(format!(
                "{} frames but {} ground-truth rects",
                frames.len(),
                spec.len()
            )));
        }
        Ok(Sequence {
            spec,
            frames: Some(frames),
        })
    }

    pub fn on_disk(spec: SequenceSpec) -> Self {
        Sequence { spec, frames: None }
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::on_disk(load_otb_sequence(dir)?))
    }

    pub fn len(&self) -> usize {
        self.spec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spec.is_empty()
    }

    pub fn frame(&self, i: usize) -> Result<ImageFrame> {
        if i >= self.len() {
            return Err(Error::Data(format!(
                "frame {i} out of range for {} frames",
                self.len()
            )));
        }
        match &self.frames {
            Some(f) => Ok(f[i].clone()),
            None => ImageFrame::load(&self.spec.frames[i]),
        }
    }

    /// Ground truth of frame `i` in 0-indexed image coordinates.
    pub fn target(&self, i: usize) -> Rect {
        otb_to_image(&self.spec.groundtruth[i])
    }
}
