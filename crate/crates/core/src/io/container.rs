//! `SDQT` matrix container.
//!
//! Layout (little-endian): magic `SDQT`, version `u16`, dtype tag `u8`
//! (1 = f32, 2 = f64), rank `u8` (always 2), two `u64` dimensions, then the
//! row-major payload.

use std::fs;
use std::path::Path;

use crate::error::{Result, SdqError};
use crate::tensor::DenseMatrix;

pub const MAGIC: &[u8; 4] = b"SDQT";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 1 + 1 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Self::F32 => 1,
            Self::F64 => 2,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(Self::F32),
            2 => Ok(Self::F64),
            _ => Err(SdqError::Container(format!("unknown dtype tag {tag}"))),
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = SdqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            _ => Err(SdqError::InvalidArgument(format!("unknown dtype {s:?}"))),
        }
    }
}

/// Serializes `m`; `F32` narrows each value.
pub fn encode_matrix(m: &DenseMatrix, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.data().len() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype.tag());
    out.push(2);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for &v in m.data() {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<DenseMatrix> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(SdqError::Container("not an SDQT container".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(SdqError::Container(format!(
            "truncated header: expected {HEADER_LEN} bytes, found {}",
            bytes.len()
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(SdqError::Container(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let dtype = Dtype::from_tag(bytes[6])?;
    if bytes[7] != 2 {
        return Err(SdqError::Container(format!("rank {} is not 2", bytes[7])));
    }
    let dim = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let (rows, cols) = (dim(8), dim(16));
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(dtype.size() as u64))
        .and_then(|n| n.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| SdqError::Container(format!("shape {rows}x{cols} overflows")))?;
    if bytes.len() as u64 != expected {
        return Err(SdqError::Container(format!(
            "payload size mismatch: expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let payload = &bytes[HEADER_LEN..];
    let data: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    DenseMatrix::new(rows as usize, cols as usize, data)
}

pub fn save_matrix(path: impl AsRef<Path>, m: &DenseMatrix, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_matrix(m, dtype))
        .map_err(|e| SdqError::Container(format!("{}: {e}", path.display())))
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    let bytes =
        fs::read(path).map_err(|e| SdqError::Container(format!("{}: {e}", path.display())))?;
    decode_matrix(&bytes)
}
