//! Hyperspectral cube container and its binary file format.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size        | field                                     |
//! |--------|-------------|-------------------------------------------|
//! | 0      | 4           | magic `HSIC`                              |
//! | 4      | 2           | version, u16 = 1                          |
//! | 6      | 4 × 4       | H, W, CH, K as u32                        |
//! | 22     | 4·H·W·CH    | f32 values, band-interleaved-by-pixel     |
//! | …      | 2·H·W       | i16 labels, 0 = unlabeled, 1..=K classes  |
//! | …      | H·W         | optional u8 split plane (0/1/2)           |
//!
//! The split plane is present iff exactly `H·W` bytes follow the labels.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HSIC";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 * 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    #[default]
    None,
    Train,
    Test,
}

impl SplitTag {
    pub fn to_byte(self) -> u8 {
        match self {
            SplitTag::None => 0,
            SplitTag::Train => 1,
            SplitTag::Test => 2,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(SplitTag::None),
            1 => Ok(SplitTag::Train),
            2 => Ok(SplitTag::Test),
            other => Err(Error::format(format!("invalid split tag {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    None,
    /// Per-band min-max scaling to `[0, 1]`.
    #[default]
    MinMax,
    /// Per-band zero mean, unit variance.
    ZScore,
}

/// A scene of `H × W` pixels with `CH` bands each.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub num_classes: usize,
    /// `[H, W, CH]` row-major.
    pub values: Vec<f32>,
    /// `[H, W]`, 0 = unlabeled.
    pub labels: Vec<i16>,
    pub split: Option<Vec<SplitTag>>,
}

impl HsiCube {
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        num_classes: usize,
        values: Vec<f32>,
        labels: Vec<i16>,
    ) -> Result<Self> {
        let cube = Self {
            height,
            width,
            bands,
            num_classes,
            values,
            labels,
            split: None,
        };
        cube.validate()?;
        Ok(cube)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return Err(Error::format(format!(
                "dimensions must be positive, got {}×{}×{}",
                self.height, self.width, self.bands
            )));
        }
        if self.num_classes == 0 || self.num_classes > i16::MAX as usize {
            return Err(Error::format(format!(
                "class count {} out of range",
                self.num_classes
            )));
        }
        let px = self.pixels();
        if self.values.len() != px * self.bands {
            return Err(Error::format(format!(
                "value plane has {} entries, expected {}",
                self.values.len(),
                px * self.bands
            )));
        }
        if self.labels.len() != px {
            return Err(Error::format(format!(
                "label plane has {} entries, expected {px}",
                self.labels.len()
            )));
        }
        if let Some(&bad) = self
            .labels
            .iter()
            .find(|&&l| l < 0 || l as usize > self.num_classes)
        {
            return Err(Error::format(format!(
                "label {bad} outside 0..={}",
                self.num_classes
            )));
        }
        if let Some(split) = &self.split {
            if split.len() != px {
                return Err(Error::format("split plane size mismatch"));
            }
            if split
                .iter()
                .zip(&self.labels)
                .any(|(&s, &l)| s != SplitTag::None && l == 0)
            {
                return Err(Error::format("unlabeled pixel assigned to a split"));
            }
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn spectrum(&self, row: usize, col: usize) -> &[f32] {
        let start = self.index(row, col) * self.bands;
        &self.values[start..start + self.bands]
    }

    pub fn label(&self, row: usize, col: usize) -> i16 {
        self.labels[self.index(row, col)]
    }

    /// Number of labeled pixels per class, index 0 = class 1.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            if l > 0 {
                counts[l as usize - 1] += 1;
            }
        }
        counts
    }

    /// Coordinates tagged with `tag` in raster order.
    pub fn split_coords(&self, tag: SplitTag) -> Vec<(usize, usize)> {
        let Some(split) = &self.split else {
            return Vec::new();
        };
        split
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == tag)
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }

    /// Rescales each band in place.
    pub fn normalize(&mut self, mode: Normalization) {
        if mode == Normalization::None {
            return;
        }
        let ch = self.bands;
        for b in 0..ch {
            let band = || self.values.iter().skip(b).step_by(ch).map(|&v| v as f64);
            let (shift, scale) = match mode {
                Normalization::MinMax => {
                    let lo = band().fold(f64::INFINITY, f64::min);
                    let hi = band().fold(f64::NEG_INFINITY, f64::max);
                    let range = hi - lo;
                    (lo, if range > 0.0 { 1.0 / range } else { 0.0 })
                }
                Normalization::ZScore => {
                    let n = self.pixels() as f64;
                    let mean = band().sum::<f64>() / n;
                    let var = band().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    (mean, if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 })
                }
                Normalization::None => unreachable!(),
            };
            for v in self.values.iter_mut().skip(b).step_by(ch) {
                *v = ((*v as f64 - shift) * scale) as f32;
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let px = self.pixels();
        let mut out = Vec::with_capacity(HEADER_LEN + px * (4 * self.bands + 3));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for d in [self.height, self.width, self.bands, self.num_classes] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        if let Some(split) = &self.split {
            out.extend(split.iter().map(|s| s.to_byte()));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::format("bad magic, expected HSIC"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::format(format!("unsupported version {version}")));
        }
        let dim = |i: usize| {
            let o = 6 + 4 * i;
            u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize
        };
        let (height, width, bands, num_classes) = (dim(0), dim(1), dim(2), dim(3));
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::format(format!(
                "dimensions must be positive, got {height}×{width}×{bands}"
            )));
        }
        let px = height
            .checked_mul(width)
            .ok_or_else(|| Error::format("dimensions overflow"))?;
        let value_bytes = px
            .checked_mul(bands)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format("dimensions overflow"))?;
        let body = HEADER_LEN + value_bytes + 2 * px;
        if bytes.len() < body {
            return Err(Error::Truncated {
                expected: body,
                found: bytes.len(),
            });
        }
        let values = bytes[HEADER_LEN..HEADER_LEN + value_bytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let labels = bytes[HEADER_LEN + value_bytes..body]
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect();
        let split = match bytes.len() - body {
            0 => None,
            n if n == px => Some(
                bytes[body..]
                    .iter()
                    .map(|&b| SplitTag::from_byte(b))
                    .collect::<Result<Vec<_>>>()?,
            ),
            n if n < px => {
                return Err(Error::Truncated {
                    expected: body + px,
                    found: bytes.len(),
                })
            }
            n => {
                return Err(Error::format(format!(
                    "{n} trailing bytes after label plane"
                )))
            }
        };
        let cube = Self {
            height,
            width,
            bands,
            num_classes,
            values,
            labels,
            split,
        };
        cube.validate()?;
        Ok(cube)
    }
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    HsiCube::from_bytes(&fs::read(path)?)
}

pub fn write_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    cube.validate()?;
    fs::write(path, cube.to_bytes())?;
    Ok(())
}
