//! PNG/JPEG decoding and encoding, and the binary `.flo` vector-field format.
//!
//! A `.flo` file is a 12-byte header (little-endian `f32` magic 202021.25,
//! `i32` width, `i32` height) followed by row-major `f32` `(tx, ty)` pairs.
//! The normalized magnitude plane goes to a sibling file named
//! `<path>.mag` with the same header and one `f32` per pixel.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};

use crate::error::{Error, Result};
use crate::raster::{FlowField, ImageBuf, LineDrawing};

pub const FLO_MAGIC: f32 = 202021.25;
const FLO_HEADER: usize = 12;

/// Reads and decodes a PNG or JPEG file.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuf> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

/// Decodes an in-memory PNG or JPEG. Samples are scaled from the integer
/// range onto `[0, 1]`.
pub fn decode_image(bytes: &[u8]) -> Result<ImageBuf> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Decode(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => {
            ImageBuf::new(w, h, 1, buf.into_raw().into_iter().map(unit_u8).collect())
        }
        DynamicImage::ImageRgb8(buf) => {
            ImageBuf::new(w, h, 3, buf.into_raw().into_iter().map(unit_u8).collect())
        }
        DynamicImage::ImageLuma16(buf) => ImageBuf::new(
            w,
            h,
            1,
            buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        ),
        DynamicImage::ImageRgb16(buf) => ImageBuf::new(
            w,
            h,
            3,
            buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        ),
        DynamicImage::ImageRgb32F(buf) => ImageBuf::from_clamped(
            w,
            h,
            3,
            buf.into_raw().into_iter().map(f64::from).collect(),
        ),
        other => Err(Error::UnsupportedChannels(
            other.color().channel_count() as usize,
        )),
    }
}

/// Width and height from the image header, without decoding pixels.
pub fn image_dimensions(bytes: &[u8]) -> Result<(usize, usize)> {
    let (w, h) = image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::Decode(e.to_string()))?
        .into_dimensions()
        .map_err(|e| Error::Decode(e.to_string()))?;
    Ok((w as usize, h as usize))
}

#[inline]
fn unit_u8(v: u8) -> f64 {
    v as f64 / 255.0
}

#[inline]
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes an image as an 8-bit PNG (gray or RGB). Two-channel rasters are
/// written as RGB with a zero blue channel.
pub fn encode_png(img: &ImageBuf) -> Result<Vec<u8>> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let dynamic = match img.channels() {
        1 => DynamicImage::ImageLuma8(
            image::GrayImage::from_raw(w, h, img.data().iter().map(|&v| quantize(v)).collect())
                .ok_or_else(|| Error::Encode("buffer size".into()))?,
        ),
        2 => DynamicImage::ImageRgb8(
            image::RgbImage::from_raw(
                w,
                h,
                img.data()
                    .chunks_exact(2)
                    .flat_map(|p| [quantize(p[0]), quantize(p[1]), 0])
                    .collect(),
            )
            .ok_or_else(|| Error::Encode("buffer size".into()))?,
        ),
        _ => DynamicImage::ImageRgb8(
            image::RgbImage::from_raw(w, h, img.data().iter().map(|&v| quantize(v)).collect())
                .ok_or_else(|| Error::Encode("buffer size".into()))?,
        ),
    };
    let mut out = Cursor::new(Vec::new());
    dynamic
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn encode_drawing_png(drawing: &LineDrawing) -> Result<Vec<u8>> {
    encode_png(&drawing.to_image())
}

/// Writes an image as PNG.
pub fn save_image(img: &ImageBuf, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_drawing(drawing: &LineDrawing, path: impl AsRef<Path>) -> Result<()> {
    save_image(&drawing.to_image(), path)
}

/// Path of the magnitude plane stored next to a `.flo` file.
pub fn magnitude_path(flo: impl AsRef<Path>) -> PathBuf {
    let mut s = flo.as_ref().as_os_str().to_owned();
    s.push(".mag");
    PathBuf::from(s)
}

fn flo_header(width: usize, height: usize, payload_floats: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(FLO_HEADER + payload_floats * 4);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(width as i32).to_le_bytes());
    out.extend_from_slice(&(height as i32).to_le_bytes());
    out
}

/// Serializes a field into `(tangent file, magnitude file)` bytes.
pub fn encode_flo(field: &FlowField) -> (Vec<u8>, Vec<u8>) {
    let (w, h) = (field.width(), field.height());
    let mut vectors = flo_header(w, h, 2 * w * h);
    for t in field.tangents() {
        vectors.extend_from_slice(&(t[0] as f32).to_le_bytes());
        vectors.extend_from_slice(&(t[1] as f32).to_le_bytes());
    }
    let mut mags = flo_header(w, h, w * h);
    for &m in field.magnitude() {
        mags.extend_from_slice(&(m as f32).to_le_bytes());
    }
    (vectors, mags)
}

/// Parses a header and returns `(width, height, payload)`.
fn parse_flo(bytes: &[u8], floats_per_pixel: usize) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < FLO_HEADER {
        return Err(Error::SizeMismatch {
            expected: FLO_HEADER,
            actual: bytes.len(),
        });
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let magic = f32::from_le_bytes(word(0));
    if magic != FLO_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let w = i32::from_le_bytes(word(4));
    let h = i32::from_le_bytes(word(8));
    if w < 0 || h < 0 {
        return Err(Error::InvalidParameter(format!("negative flow size {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = w * h * floats_per_pixel * 4;
    let payload = &bytes[FLO_HEADER..];
    if payload.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: payload.len(),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((w, h, values))
}

/// Parses tangent bytes and, when present, magnitude bytes. A missing
/// magnitude plane reads as all zeros.
pub fn decode_flo(vectors: &[u8], magnitude: Option<&[u8]>) -> Result<FlowField> {
    let (w, h, raw) = parse_flo(vectors, 2)?;
    let tangents = raw
        .chunks_exact(2)
        .map(|p| [p[0] as f64, p[1] as f64])
        .collect();
    let mags = match magnitude {
        Some(bytes) => {
            let (mw, mh, raw) = parse_flo(bytes, 1)?;
            if (mw, mh) != (w, h) {
                return Err(Error::DimensionMismatch(format!(
                    "magnitude plane is {mw}x{mh}, field is {w}x{h}"
                )));
            }
            raw.into_iter().map(f64::from).collect()
        }
        None => vec![0.0; w * h],
    };
    FlowField::new(w, h, tangents, mags)
}

pub fn write_flo(field: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (vectors, mags) = encode_flo(field);
    fs::write(path, vectors).map_err(|e| Error::io(path, e))?;
    let mag_path = magnitude_path(path);
    fs::write(&mag_path, mags).map_err(|e| Error::io(mag_path, e))
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let vectors = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mag_path = magnitude_path(path);
    let mags = match fs::read(&mag_path) {
        Ok(bytes) => Some(bytes),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(Error::io(mag_path, e)),
    };
    decode_flo(&vectors, mags.as_deref())
}

/// Validates a tangent file and returns its `(width, height)`.
pub fn flo_header_info(bytes: &[u8]) -> Result<(usize, usize)> {
    let (w, h, _) = parse_flo(bytes, 2)?;
    Ok((w, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bad_magic_and_size() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&0.0f32.to_le_bytes());
        bytes.extend_from_slice(&1i32.to_le_bytes());
        bytes.extend_from_slice(&1i32.to_le_bytes());
        bytes.extend_from_slice(&[0; 8]);
        assert!(matches!(decode_flo(&bytes, None), Err(Error::BadMagic(m)) if m == 0.0));

        let mut bytes = flo_header(4, 4, 0);
        bytes.extend_from_slice(&[0; 3 * 8]);
        assert!(matches!(
            decode_flo(&bytes, None),
            Err(Error::SizeMismatch { expected: 128, actual: 24 })
        ));
    }

    #[test]
    fn gray_128_scales() {
        let img = image::GrayImage::from_raw(1, 1, vec![128]).unwrap();
        let mut bytes = Cursor::new(Vec::new());
        DynamicImage::ImageLuma8(img)
            .write_to(&mut bytes, ImageFormat::Png)
            .unwrap();
        let decoded = decode_image(bytes.get_ref()).unwrap();
        assert!((decoded.data()[0] - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn rgba_is_rejected() {
        let img = image::RgbaImage::from_raw(1, 1, vec![1, 2, 3, 255]).unwrap();
        let mut bytes = Cursor::new(Vec::new());
        DynamicImage::ImageRgba8(img)
            .write_to(&mut bytes, ImageFormat::Png)
            .unwrap();
        assert!(matches!(
            decode_image(bytes.get_ref()),
            Err(Error::UnsupportedChannels(4))
        ));
    }
}
