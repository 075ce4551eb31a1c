//! Binary tensor file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DWAF" | u32 version = 1 | u8 dtype | u8 ndim | 2 zero bytes
//!        | ndim × u64 dims | row-major payload
//! ```
//!
//! dtype 1 is IEEE-754 binary32 and dtype 2 is binary64.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

pub const MAGIC: [u8; 4] = *b"DWAF";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;
pub const DTYPE_F64: u8 = 2;

const FIXED_HEADER: usize = 12;

/// Parsed header of a tensor file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorHeader {
    pub dtype: u8,
    pub dims: Vec<usize>,
}

impl TensorHeader {
    pub fn elem_size(&self) -> usize {
        if self.dtype == DTYPE_F64 {
            8
        } else {
            4
        }
    }

    pub fn header_len(&self) -> usize {
        FIXED_HEADER + 8 * self.dims.len()
    }
}

/// Parses and validates the header, returning it with the payload bytes.
pub fn decode_header(bytes: &[u8]) -> Result<(TensorHeader, &[u8])> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: FIXED_HEADER as u64,
            found: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < FIXED_HEADER {
        return Err(Error::MalformedHeader(format!(
            "{} bytes is shorter than the fixed header",
            bytes.len()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = bytes[8];
    if dtype != DTYPE_F32 && dtype != DTYPE_F64 {
        return Err(Error::UnsupportedDtype(dtype));
    }
    let ndim = bytes[9] as usize;
    if bytes[10] != 0 || bytes[11] != 0 {
        return Err(Error::MalformedHeader("non-zero padding bytes".into()));
    }
    if ndim == 0 {
        return Err(Error::MalformedHeader("ndim must be at least 1".into()));
    }
    let dims_end = FIXED_HEADER + 8 * ndim;
    if bytes.len() < dims_end {
        return Err(Error::MalformedHeader(format!(
            "header declares {ndim} dims but file ends after {} bytes",
            bytes.len()
        )));
    }
    let mut dims = Vec::with_capacity(ndim);
    for chunk in bytes[FIXED_HEADER..dims_end].chunks_exact(8) {
        let d = u64::from_le_bytes(chunk.try_into().unwrap());
        if d == 0 {
            return Err(Error::MalformedHeader("zero-sized dimension".into()));
        }
        dims.push(usize::try_from(d).map_err(|_| {
            Error::MalformedHeader(format!("dimension {d} does not fit in memory"))
        })?);
    }
    let header = TensorHeader { dtype, dims };
    let payload = &bytes[dims_end..];
    let expected = header
        .dims
        .iter()
        .try_fold(header.elem_size() as u64, |acc, &d| acc.checked_mul(d as u64))
        .ok_or_else(|| Error::MalformedHeader("element count overflows".into()))?;
    let found = payload.len() as u64;
    if found < expected {
        return Err(Error::Truncated { expected, found });
    }
    if found > expected {
        return Err(Error::SizeMismatch { expected, found });
    }
    Ok((header, payload))
}

/// Decodes a tensor file, converting the stored dtype into `F`.
pub fn decode_tensor<F: Real>(bytes: &[u8]) -> Result<Tensor<F>> {
    let (header, payload) = decode_header(bytes)?;
    let data: Vec<F> = if header.dtype == DTYPE_F32 {
        payload
            .chunks_exact(4)
            .map(|c| F::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect()
    } else {
        payload
            .chunks_exact(8)
            .map(|c| F::of(f64::from_le_bytes(c.try_into().unwrap())))
            .collect()
    };
    Tensor::new(header.dims, data)
}

/// Encodes `t` in its own precision (`F::DTYPE`).
pub fn encode_tensor<F: Real>(t: &Tensor<F>) -> Vec<u8> {
    let elem = if F::DTYPE == DTYPE_F64 { 8 } else { 4 };
    let mut out = Vec::with_capacity(FIXED_HEADER + 8 * t.ndim() + elem * t.numel());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(F::DTYPE);
    out.push(u8::try_from(t.ndim()).expect("rank fits in u8"));
    out.extend_from_slice(&[0, 0]);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        if F::DTYPE == DTYPE_F64 {
            out.extend_from_slice(&v.f64().to_le_bytes());
        } else {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn read_tensor_file<F: Real>(path: &Path) -> Result<Tensor<F>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

pub fn write_tensor_file<F: Real>(path: &Path, t: &Tensor<F>) -> Result<()> {
    std::fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}
