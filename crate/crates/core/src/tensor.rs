//! Weight matrices and the raw tensor byte format.
//!
//! Raw tensor layout, all integers little-endian:
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 8    | magic `DNSQTNSR`                       |
//! | 8      | 4    | dtype code (1 = f32, 2 = f64)          |
//! | 12     | 4    | element width in bytes (4 or 8)        |
//! | 16     | 4    | rows                                   |
//! | 20     | 4    | cols                                   |
//! | 24     | ..   | rows * cols IEEE-754 values, row-major |
//!
//! The payload length must equal `rows * cols * width` exactly.

use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Result};

pub const RAW_MAGIC: [u8; 8] = *b"DNSQTNSR";
pub const RAW_HEADER_LEN: usize = 24;

/// A dense full-precision weight matrix, row-major, one row per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl WeightMatrix {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyDimension { rows, cols });
        }
        let n = rows.checked_mul(cols).ok_or(Error::DimensionOverflow)?;
        if values.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(Self {
            name: name.into(),
            rows,
            cols,
            values,
        })
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Result<Self> {
        let n = rows.checked_mul(cols).ok_or(Error::DimensionOverflow)?;
        Self::new(name, rows, cols, alloc::vec![0.0; n])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Fails unless `other` has the same shape.
    pub fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if self.rows != rows || self.cols != cols {
            return Err(Error::ShapeMismatch {
                expected_rows: self.rows,
                expected_cols: self.cols,
                rows,
                cols,
            });
        }
        Ok(())
    }

    pub fn to_raw_bytes(&self) -> Vec<u8> {
        encode_raw_f32(self.rows, self.cols, &self.values)
    }

    /// Parses a raw tensor. `f64` payloads are narrowed to `f32`.
    pub fn from_raw_bytes(name: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        let raw = RawTensor::decode(bytes)?;
        let (rows, cols) = (raw.rows, raw.cols);
        Self::new(name, rows, cols, raw.into_f32())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

/// A decoded raw tensor file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub rows: usize,
    pub cols: usize,
    pub data: RawData,
}

impl RawTensor {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < RAW_HEADER_LEN {
            return Err(Error::MalformedHeader("shorter than 24 bytes"));
        }
        if bytes[..8] != RAW_MAGIC {
            return Err(Error::BadMagic);
        }
        let dtype = read_u32(&bytes[8..12]);
        let width = read_u32(&bytes[12..16]) as usize;
        let rows = read_u32(&bytes[16..20]) as usize;
        let cols = read_u32(&bytes[20..24]) as usize;
        let expected_width = match dtype {
            1 => 4,
            2 => 8,
            other => return Err(Error::UnsupportedDtype(other)),
        };
        if width != expected_width {
            return Err(Error::MalformedHeader("element width disagrees with dtype"));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyDimension { rows, cols });
        }
        let payload_len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(width))
            .ok_or(Error::DimensionOverflow)?;
        let payload = &bytes[RAW_HEADER_LEN..];
        if payload.len() < payload_len {
            return Err(Error::Truncated {
                expected: payload_len,
                actual: payload.len(),
            });
        }
        if payload.len() > payload_len {
            return Err(Error::TrailingBytes(payload.len() - payload_len));
        }
        let data = if dtype == 1 {
            let v: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if let Some(index) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFiniteValue { index });
            }
            RawData::F32(v)
        } else {
            let v: Vec<f64> = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
                .collect();
            if let Some(index) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFiniteValue { index });
            }
            RawData::F64(v)
        };
        Ok(Self { rows, cols, data })
    }

    pub fn into_f32(self) -> Vec<f32> {
        match self.data {
            RawData::F32(v) => v,
            RawData::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        }
    }

    pub fn into_f64(self) -> Vec<f64> {
        match self.data {
            RawData::F32(v) => v.into_iter().map(f64::from).collect(),
            RawData::F64(v) => v,
        }
    }
}

fn header(dtype: u32, width: u32, rows: usize, cols: usize, cap: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + cap);
    out.extend_from_slice(&RAW_MAGIC);
    out.extend_from_slice(&dtype.to_le_bytes());
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    out
}

pub fn encode_raw_f32(rows: usize, cols: usize, values: &[f32]) -> Vec<u8> {
    debug_assert_eq!(rows * cols, values.len());
    let mut out = header(1, 4, rows, cols, values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_raw_f64(rows: usize, cols: usize, values: &[f64]) -> Vec<u8> {
    debug_assert_eq!(rows * cols, values.len());
    let mut out = header(2, 8, rows, cols, values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}
