//! Binary array files with a small JSON header.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"RTWN"            magic
//! u32                header length in bytes
//! [u8; len]          UTF-8 JSON header {"dtype", "shape", "meta"}
//! payload            row-major f64 values; complex entries are stored as
//!                    interleaved (re, im) pairs
//! ```
//!
//! `dtype` is `"f64"` or `"c128"`. `meta` is free-form JSON (time index,
//! user, tone, ...).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Result, TwinError};
use crate::linalg::{CMat, C64};

pub const MAGIC: &[u8; 4] = b"RTWN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    C128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    #[serde(default)]
    pub meta: Value,
}

impl TensorHeader {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Real(Vec<f64>),
    Complex(Vec<C64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub header: TensorHeader,
    pub data: TensorData,
}

impl Tensor {
    pub fn complex(shape: Vec<usize>, data: Vec<C64>, meta: Value) -> Result<Self> {
        let header = TensorHeader {
            dtype: Dtype::C128,
            shape,
            meta,
        };
        if header.numel() != data.len() {
            return Err(TwinError::shape(header.numel(), data.len()));
        }
        Ok(Self {
            header,
            data: TensorData::Complex(data),
        })
    }

    pub fn real(shape: Vec<usize>, data: Vec<f64>, meta: Value) -> Result<Self> {
        let header = TensorHeader {
            dtype: Dtype::F64,
            shape,
            meta,
        };
        if header.numel() != data.len() {
            return Err(TwinError::shape(header.numel(), data.len()));
        }
        Ok(Self {
            header,
            data: TensorData::Real(data),
        })
    }

    /// Row-major complex matrix tensor.
    pub fn from_matrix(m: &CMat, meta: Value) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self {
            header: TensorHeader {
                dtype: Dtype::C128,
                shape: vec![m.nrows(), m.ncols()],
                meta,
            },
            data: TensorData::Complex(data),
        }
    }

    pub fn as_complex(&self) -> Result<&[C64]> {
        match &self.data {
            TensorData::Complex(v) => Ok(v),
            TensorData::Real(_) => Err(TwinError::Format("expected complex tensor".into())),
        }
    }

    /// Interprets the trailing two dimensions as a row-major matrix and
    /// returns matrix `index` of the leading dimensions.
    pub fn matrix_at(&self, index: usize) -> Result<CMat> {
        let data = self.as_complex()?;
        let shape = &self.header.shape;
        if shape.len() < 2 {
            return Err(TwinError::Format("tensor has fewer than two dims".into()));
        }
        let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let start = index * r * c;
        if start + r * c > data.len() {
            return Err(TwinError::Format("matrix index out of range".into()));
        }
        Ok(CMat::from_row_slice(r, c, &data[start..start + r * c]))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        match &self.data {
            TensorData::Real(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            TensorData::Complex(v) => {
                for z in v {
                    w.write_all(&z.re.to_le_bytes())?;
                    w.write_all(&z.im.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TwinError::Format("bad tensor magic".into()));
        }
        let len = read_u32(&mut r)? as usize;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)?;
        let header: TensorHeader = serde_json::from_slice(&header)?;
        let n = header.numel();
        let data = match header.dtype {
            Dtype::F64 => TensorData::Real(read_f64s(&mut r, n)?),
            Dtype::C128 => {
                let raw = read_f64s(&mut r, 2 * n)?;
                TensorData::Complex(raw.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect())
            }
        };
        Ok(Self { header, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}


pub(crate) fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; 8 * n];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub(crate) fn write_f64s(w: &mut impl Write, v: &[f64]) -> Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}
