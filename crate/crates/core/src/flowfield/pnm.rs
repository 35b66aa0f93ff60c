//! Binary PGM (P5) and PPM (P6), maxval 255.

use std::fs;
use std::path::Path;

use super::{FlowError, LabelMap, RgbImage};

/// Evenly spaced gray level of component `k` out of `count`.
pub fn component_gray(k: usize, count: usize) -> u8 {
    if count <= 1 {
        return 255;
    }
    ((k * 255) as f64 / (count - 1) as f64).round() as u8
}

fn header(magic: &str, w: usize, h: usize) -> Vec<u8> {
    format!("{magic}\n{w} {h}\n255\n").into_bytes()
}

/// Encodes raw gray values, one byte per pixel.
pub fn encode_pgm(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    let mut out = header("P5", width, height);
    out.extend_from_slice(gray);
    out
}

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = header("P6", image.width(), image.height());
    out.extend_from_slice(image.data());
    out
}

fn parse(bytes: &[u8], magic: &[u8; 2]) -> Result<(usize, usize, usize), FlowError> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(FlowError::BadHeader(format!("expected {}", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| FlowError::BadHeader("missing dimension".into()))?;
    }
    if fields[2] != 255 {
        return Err(FlowError::BadHeader(format!("unsupported maxval {}", fields[2])));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(FlowError::BadHeader("missing separator".into()));
    }
    Ok((fields[0], fields[1], pos + 1))
}

/// Returns `(width, height, gray values)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), FlowError> {
    let (w, h, off) = parse(bytes, b"P5")?;
    let expected = off + w * h;
    if bytes.len() < expected {
        return Err(FlowError::TruncatedFile { expected, found: bytes.len() });
    }
    Ok((w, h, bytes[off..expected].to_vec()))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, FlowError> {
    let (w, h, off) = parse(bytes, b"P6")?;
    let expected = off + 3 * w * h;
    if bytes.len() < expected {
        return Err(FlowError::TruncatedFile { expected, found: bytes.len() });
    }
    RgbImage::new(w, h, bytes[off..expected].to_vec())
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> FlowError + '_ {
    move |source| FlowError::IoFailure { path: path.into(), source }
}

/// Writes a label map with labels spread over evenly spaced gray levels
/// (`levels` labels; binary masks use `levels = 2`, giving 0 and 255).
pub fn write_pgm(map: &LabelMap, levels: usize, path: impl AsRef<Path>) -> Result<(), FlowError> {
    let path = path.as_ref();
    let gray: Vec<u8> = map.data().iter().map(|&l| component_gray(l as usize, levels)).collect();
    fs::write(path, encode_pgm(map.width(), map.height(), &gray)).map_err(io(path))
}

/// Inverse of [`write_pgm`]: maps each gray value to the nearest of `levels` levels.
pub fn read_pgm(path: impl AsRef<Path>, levels: usize) -> Result<LabelMap, FlowError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io(path))?;
    let (w, h, gray) = decode_pgm(&bytes)?;
    let levels = levels.max(2);
    let data = gray
        .iter()
        .map(|&g| ((g as f64) * (levels - 1) as f64 / 255.0).round() as u8)
        .collect();
    LabelMap::new(w, h, data)
}

pub fn write_ppm(image: &RgbImage, path: impl AsRef<Path>) -> Result<(), FlowError> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(image)).map_err(io(path))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage, FlowError> {
    let path = path.as_ref();
    decode_ppm(&fs::read(path).map_err(io(path))?)
}
