//! File formats: binary PGM (P5) and grayscale PNG for frames and masks,
//! Middlebury `.flo` for flow fields, and the per-sequence JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{FlowField, Frame, Mask, Sequence, SequenceKind, ThresholdConfig};

/// Magic tag opening every `.flo` file (the float 202021.25 in little endian).
pub const FLO_MAGIC: &[u8; 4] = b"PIEH";
const FLO_HEADER_LEN: usize = 12;
const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A];

/// Decoded grayscale raster with intensities rescaled to `[0, 1]`.
///
/// This is the format-level view; [`Frame`] adds the minimum-size invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayRaster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
    /// Maximum sample value of the source encoding (255 or 65535 for PNG).
    pub maxval: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ImageFormat {
    Pgm,
    Png,
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("pgm") => Ok(ImageFormat::Pgm),
        Some("png") => Ok(ImageFormat::Png),
        _ => Err(Error::UnsupportedFormat(format!(
            "{}: expected a .pgm or .png extension",
            path.display()
        ))),
    }
}

#[inline]
fn rescale(sample: u32, maxval: u32) -> f32 {
    (sample as f64 / maxval as f64) as f32
}

#[inline]
fn quantize(value: f32, maxval: u32) -> u32 {
    (value as f64 * maxval as f64)
        .round()
        .clamp(0.0, maxval as f64) as u32
}

/// Parses a binary (P5) PGM.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayRaster> {
    let mut cursor = PgmCursor { bytes, pos: 0 };
    match bytes.get(0..2) {
        Some(b"P5") => {}
        Some(b"P6") | Some(b"P3") => {
            return Err(Error::UnsupportedFormat(
                "color PPM input; only grayscale is supported".into(),
            ))
        }
        Some(b"P2") => {
            return Err(Error::UnsupportedFormat(
                "ASCII PGM (P2); only binary P5 is supported".into(),
            ))
        }
        _ => {
            return Err(Error::Format {
                offset: 0,
                message: "missing P5 magic number".into(),
            })
        }
    }
    cursor.pos = 2;
    let width = cursor.header_number("width")?;
    let height = cursor.header_number("height")?;
    let maxval = cursor.header_number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format {
            offset: cursor.pos,
            message: format!("zero image dimension {width}x{height}"),
        });
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format {
            offset: cursor.pos,
            message: format!("maxval {maxval} outside 1..=65535"),
        });
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(cursor.pos) {
        Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
        _ => {
            return Err(Error::Format {
                offset: cursor.pos,
                message: "expected a single whitespace byte before raster data".into(),
            })
        }
    }
    let sample_bytes = if maxval > 255 { 2 } else { 1 };
    let n = width as usize * height as usize;
    let raster = &bytes[cursor.pos..];
    if raster.len() != n * sample_bytes {
        return Err(Error::Length {
            expected: cursor.pos + n * sample_bytes,
            found: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let sample = if sample_bytes == 2 {
            u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as u32
        } else {
            raster[i] as u32
        };
        if sample > maxval {
            return Err(Error::Format {
                offset: cursor.pos + i * sample_bytes,
                message: format!("sample {sample} exceeds maxval {maxval}"),
            });
        }
        data.push(rescale(sample, maxval));
    }
    Ok(GrayRaster {
        width: width as usize,
        height: height as usize,
        data,
        maxval,
    })
}

struct PgmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PgmCursor<'_> {
    fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn header_number(&mut self, what: &str) -> Result<u32> {
        let before = self.pos;
        self.skip_separators();
        if self.pos == before {
            return Err(Error::Format {
                offset: self.pos,
                message: format!("expected whitespace before {what}"),
            });
        }
        let start = self.pos;
        let mut value: u64 = 0;
        while let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value * 10 + (b - b'0') as u64;
            if value > u32::MAX as u64 {
                return Err(Error::Format {
                    offset: self.pos,
                    message: format!("{what} overflows"),
                });
            }
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::Format {
                offset: start,
                message: format!("expected decimal {what}"),
            });
        }
        Ok(value as u32)
    }
}

/// Encodes a binary PGM. `maxval` selects 8-bit (<= 255) or 16-bit samples.
pub fn encode_pgm(width: usize, height: usize, data: &[f32], maxval: u32) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    for &v in data {
        let q = quantize(v, maxval);
        if maxval > 255 {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    out
}

fn decode_png(bytes: &[u8]) -> Result<GrayRaster> {
    if let Some(i) = PNG_SIGNATURE
        .iter()
        .zip(bytes)
        .position(|(a, b)| a != b)
        .or_else(|| (bytes.len() < PNG_SIGNATURE.len()).then_some(bytes.len()))
    {
        return Err(Error::Format {
            offset: i,
            message: "bad PNG signature".into(),
        });
    }
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|e| {
        Error::Format {
            offset: PNG_SIGNATURE.len(),
            message: format!("PNG decode failed: {e}"),
        }
    })?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => Ok(GrayRaster {
            width,
            height,
            data: buf
                .into_raw()
                .into_iter()
                .map(|s| rescale(s as u32, 255))
                .collect(),
            maxval: 255,
        }),
        DynamicImage::ImageLuma16(buf) => Ok(GrayRaster {
            width,
            height,
            data: buf
                .into_raw()
                .into_iter()
                .map(|s| rescale(s as u32, 65535))
                .collect(),
            maxval: 65535,
        }),
        other => Err(Error::UnsupportedFormat(format!(
            "PNG color type {:?}; only single-channel grayscale is supported",
            other.color()
        ))),
    }
}

fn encode_png(
    path: &Path,
    width: usize,
    height: usize,
    data: &[f32],
    sixteen_bit: bool,
) -> Result<()> {
    let (w, h) = (width as u32, height as u32);
    let result = if sixteen_bit {
        let raw: Vec<u16> = data.iter().map(|&v| quantize(v, 65535) as u16).collect();
        ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw)
            .expect("buffer length matches dimensions")
            .save_with_format(path, image::ImageFormat::Png)
    } else {
        let raw: Vec<u8> = data.iter().map(|&v| quantize(v, 255) as u8).collect();
        ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw)
            .expect("buffer length matches dimensions")
            .save_with_format(path, image::ImageFormat::Png)
    };
    result.map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    })
}

/// Reads a grayscale PGM or PNG and rescales it to `[0, 1]`.
pub fn read_raster(path: impl AsRef<Path>) -> Result<GrayRaster> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        ImageFormat::Pgm => decode_pgm(&bytes),
        ImageFormat::Png => decode_png(&bytes),
    }
}

pub fn read_frame(path: impl AsRef<Path>) -> Result<Frame> {
    let raster = read_raster(path)?;
    Frame::new(raster.width, raster.height, raster.data)
}

/// Writes a frame as 16-bit PGM or PNG (chosen by extension).
///
/// Any frame that was itself read from an 8- or 16-bit file survives
/// `read -> write -> read` unchanged.
pub fn write_frame(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match format_for(path)? {
        ImageFormat::Pgm => {
            let bytes = encode_pgm(frame.width(), frame.height(), frame.data(), 65535);
            fs::write(path, bytes).map_err(|e| Error::io(path, e))
        }
        ImageFormat::Png => encode_png(path, frame.width(), frame.height(), frame.data(), true),
    }
}

/// Writes a mask as 8-bit 0/255.
pub fn write_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let data: Vec<f32> = mask.data().iter().map(|&b| b as f32).collect();
    match format_for(path)? {
        ImageFormat::Pgm => {
            let bytes = encode_pgm(mask.width(), mask.height(), &data, 255);
            fs::write(path, bytes).map_err(|e| Error::io(path, e))
        }
        ImageFormat::Png => encode_png(path, mask.width(), mask.height(), &data, false),
    }
}

/// Reads a mask stored as 0 / maxval. Intermediate values are rejected.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let raster = read_raster(path)?;
    let mut data = Vec::with_capacity(raster.data.len());
    for (i, &v) in raster.data.iter().enumerate() {
        data.push(match v {
            0.0 => 0,
            1.0 => 1,
            x => {
                return Err(Error::Data(format!(
                    "{}: pixel {i} has non-binary value {x}",
                    path.display()
                )))
            }
        });
    }
    Mask::new(raster.width, raster.height, data)
}

/// Serializes a flow field in the Middlebury `.flo` layout.
pub fn encode_flow(flow: &FlowField) -> Vec<u8> {
    let n = flow.width() * flow.height();
    let mut out = Vec::with_capacity(FLO_HEADER_LEN + n * 8);
    out.extend_from_slice(FLO_MAGIC);
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for (u, v) in flow.u().iter().zip(flow.v()) {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_flow(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 4 {
        return Err(Error::Length {
            expected: FLO_HEADER_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[0..4] != FLO_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!(
                "bad .flo magic {:?}, expected \"PIEH\"",
                String::from_utf8_lossy(&bytes[0..4])
            ),
        });
    }
    if bytes.len() < FLO_HEADER_LEN {
        return Err(Error::Length {
            expected: FLO_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if width <= 0 {
        return Err(Error::Format {
            offset: 4,
            message: format!("non-positive width {width}"),
        });
    }
    if height <= 0 {
        return Err(Error::Format {
            offset: 8,
            message: format!("non-positive height {height}"),
        });
    }
    let n = width as usize * height as usize;
    let expected = FLO_HEADER_LEN + n * 8;
    if bytes.len() != expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for pair in bytes[FLO_HEADER_LEN..].chunks_exact(8) {
        u.push(f32::from_le_bytes(pair[0..4].try_into().unwrap()));
        v.push(f32::from_le_bytes(pair[4..8].try_into().unwrap()));
    }
    FlowField::new(width as usize, height as usize, u, v)
}

pub fn write_flow(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_flow(flow)).map_err(|e| Error::io(path, e))
}

pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flow(&bytes)
}

/// Per-sequence record of what a run produced. Paths are relative to the
/// directory holding `manifest.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub kind: Option<SequenceKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<ThresholdConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ground_truth: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flows: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub masks: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predictions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference_trace: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        read_json(dir.as_ref().join(MANIFEST_FILE))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        write_json(self, dir.as_ref().join(MANIFEST_FILE))
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Files in `dir` whose names start with `prefix` and carry an image
/// extension, sorted lexicographically.
pub fn list_images(dir: impl AsRef<Path>, prefix: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if name.starts_with(prefix) && format_for(&path).is_ok() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads a sequence directory: from `manifest.json` when present, otherwise
/// from `frame_*` images (and `gt_*` masks, if any) sorted by name.
pub fn load_sequence(dir: impl AsRef<Path>, fallback_kind: SequenceKind) -> Result<Sequence> {
    let dir = dir.as_ref();
    let (name, kind, frame_paths, gt_paths) = if dir.join(MANIFEST_FILE).exists() {
        let m = RunManifest::load(dir)?;
        let join = |v: &[String]| v.iter().map(|p| dir.join(p)).collect::<Vec<_>>();
        (
            m.name.clone(),
            m.kind.unwrap_or(fallback_kind),
            join(&m.frames),
            join(&m.ground_truth),
        )
    } else {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("sequence")
            .to_string();
        (
            name,
            fallback_kind,
            list_images(dir, "frame_")?,
            list_images(dir, "gt_")?,
        )
    };
    let frames = frame_paths
        .iter()
        .map(read_frame)
        .collect::<Result<Vec<_>>>()?;
    let gt = if gt_paths.is_empty() {
        None
    } else {
        Some(gt_paths.iter().map(read_mask).collect::<Result<Vec<_>>>()?)
    };
    Sequence::new(name, kind, frames, gt)
}

/// Zero-padded artifact name, e.g. `indexed_name("flow", 3, "flo") == "flow_00003.flo"`.
pub fn indexed_name(prefix: &str, index: usize, ext: &str) -> String {
    format!("{prefix}_{index:05}.{ext}")
}
