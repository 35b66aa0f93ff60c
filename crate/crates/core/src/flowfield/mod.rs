//! Dense flow, image, and label containers with their file formats.
//!
//! Conventions: x grows rightward, y grows downward, storage is row-major with
//! the top row first. A flow vector `F(x, y)` maps pixel `(x, y)` of frame `t`
//! to `(x, y) + F(x, y)` in frame `t + 1`.

mod color;
mod flo;
mod pnm;

pub use color::{flow_to_color, wheel_color, MaxMagnitude, COLOR_WHEEL_LEN};
pub use flo::{decode_flo, encode_flo, read_flo, write_flo, FLO_MAGIC};
pub use pnm::{
    component_gray, decode_pgm, decode_ppm, encode_pgm, encode_ppm, read_pgm, read_ppm, write_pgm,
    write_ppm,
};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("bad .flo magic {0} (expected 202021.25)")]
    BadMagic(f32),
    #[error("truncated file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("non-finite flow value at pixel ({x}, {y})")]
    NonFiniteValue { x: usize, y: usize },
    #[error("invalid dimensions {width}x{height}")]
    DimensionOverflow { width: i64, height: i64 },
    #[error("data length {found} does not match {width}x{height} (expected {expected})")]
    LengthMismatch { width: usize, height: usize, expected: usize, found: usize },
    #[error("malformed image header: {0}")]
    BadHeader(String),
    #[error("I/O failure on {path:?}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Largest accepted width or height.
pub const MAX_DIMENSION: usize = 65535;

/// Per-pixel displacement field in px/frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    data: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, data: Vec<[f32; 2]>) -> Result<Self, FlowError> {
        if width * height != data.len() {
            return Err(FlowError::LengthMismatch {
                width,
                height,
                expected: width * height,
                found: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![[0.0; 2]; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 2]) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 2] {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[[f32; 2]] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [[f32; 2]] {
        &mut self.data
    }

    /// Flow vectors widened to `f64`.
    pub fn to_f64(&self) -> Vec<[f64; 2]> {
        self.data.iter().map(|v| [v[0] as f64, v[1] as f64]).collect()
    }

    /// First non-finite value in row-major order, if any.
    pub fn check_finite(&self) -> Result<(), FlowError> {
        match self.data.iter().position(|v| !v[0].is_finite() || !v[1].is_finite()) {
            Some(i) => Err(FlowError::NonFiniteValue { x: i % self.width, y: i / self.width }),
            None => Ok(()),
        }
    }
}

/// 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, FlowError> {
        if 3 * width * height != data.len() {
            return Err(FlowError::LengthMismatch {
                width,
                height,
                expected: 3 * width * height,
                found: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(3 * width * height).collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

/// Small-integer label image: 0 is background, 1..=N are instances.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, FlowError> {
        if width * height != data.len() {
            return Err(FlowError::LengthMismatch {
                width,
                height,
                expected: width * height,
                found: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        self.data[y * self.width + x] = label;
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn max_label(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// True when every label in `0..=max_label` occurs.
    pub fn is_dense(&self) -> bool {
        let mut seen = vec![false; self.max_label() as usize + 1];
        for &l in &self.data {
            seen[l as usize] = true;
        }
        seen.iter().skip(1).all(|&s| s)
    }

    /// Binary map of all nonzero labels.
    pub fn foreground(&self) -> LabelMap {
        LabelMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&l| u8::from(l != 0)).collect(),
        }
    }

    pub fn transpose(&self) -> LabelMap {
        let mut data = Vec::with_capacity(self.data.len());
        for x in 0..self.width {
            for y in 0..self.height {
                data.push(self.get(x, y));
            }
        }
        LabelMap { width: self.height, height: self.width, data }
    }
}
