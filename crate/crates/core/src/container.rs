//! Self-describing binary tensor container ("NVT1").
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  "NVT1"
//! version u8       currently 1
//! dtype   u8       0 = float32, 1 = float16, 2 = packed-fp4
//! ndim    u8
//! dims    ndim × u64
//! payload raw bytes, length exactly derivable from dtype and dims
//! ```
//!
//! For packed-fp4 the payload is the code section (two E2M1 codes per byte,
//! zero nibble padding for odd element counts), then one E4M3 scale byte
//! per 16-element block of the innermost axis, then the f32 global scale.

use std::fs;
use std::path::Path;

use half::f16;

use crate::error::{Error, Result};
use crate::fp8::E4m3;
use crate::quant::{PackedFp4Tensor, BLOCK};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"NVT1";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    Float32 = 0,
    Float16 = 1,
    PackedFp4 = 2,
}

impl Dtype {
    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Dtype::Float32),
            1 => Ok(Dtype::Float16),
            2 => Ok(Dtype::PackedFp4),
            other => Err(Error::UnknownDtype(other)),
        }
    }
}

/// A tensor as stored in a container file.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorPayload {
    Float32(Tensor),
    Float16(Tensor),
    PackedFp4(PackedFp4Tensor),
}

impl TensorPayload {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorPayload::Float32(_) => Dtype::Float32,
            TensorPayload::Float16(_) => Dtype::Float16,
            TensorPayload::PackedFp4(_) => Dtype::PackedFp4,
        }
    }

    pub fn dims(&self) -> &[usize] {
        match self {
            TensorPayload::Float32(t) | TensorPayload::Float16(t) => t.dims(),
            TensorPayload::PackedFp4(q) => q.dims(),
        }
    }

    /// Dense values; packed tensors are dequantized.
    pub fn to_tensor(&self) -> Tensor {
        match self {
            TensorPayload::Float32(t) | TensorPayload::Float16(t) => t.clone(),
            TensorPayload::PackedFp4(q) => q.dequantize(),
        }
    }
}

fn payload_len(dtype: Dtype, dims: &[usize]) -> usize {
    let elems: usize = dims.iter().product();
    match dtype {
        Dtype::Float32 => elems * 4,
        Dtype::Float16 => elems * 2,
        Dtype::PackedFp4 => {
            let inner = dims.last().copied().unwrap_or(1);
            let outer = if inner == 0 { 0 } else { elems / inner.max(1) };
            elems.div_ceil(2) + outer * inner.div_ceil(BLOCK) + 4
        }
    }
}

pub fn encode_tensor(payload: &TensorPayload) -> Vec<u8> {
    let dims = payload.dims();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(payload.dtype() as u8);
    out.push(dims.len() as u8);
    for d in dims {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    match payload {
        TensorPayload::Float32(t) => {
            for v in t.data() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        TensorPayload::Float16(t) => {
            for v in t.data() {
                out.extend_from_slice(&f16::from_f64(*v).to_le_bytes());
            }
        }
        TensorPayload::PackedFp4(q) => {
            out.extend_from_slice(q.packed_codes());
            out.extend(q.block_scales().iter().map(|s| s.to_bits()));
            out.extend_from_slice(&q.global_scale().to_le_bytes());
        }
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<TensorPayload> {
    if bytes.len() < 7 {
        return Err(Error::MalformedHeader(format!(
            "file is only {} bytes",
            bytes.len()
        )));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    let dtype = Dtype::from_tag(bytes[5])?;
    let ndim = bytes[6] as usize;
    let header_len = 7 + ndim * 8;
    if bytes.len() < header_len {
        return Err(Error::MalformedHeader("dims extend past end of file".into()));
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let raw = u64::from_le_bytes(bytes[7 + i * 8..15 + i * 8].try_into().unwrap());
        dims.push(usize::try_from(raw).map_err(|_| {
            Error::MalformedHeader(format!("dimension {raw} does not fit in usize"))
        })?);
    }
    let body = &bytes[header_len..];
    let expected = payload_len(dtype, &dims);
    if body.len() != expected {
        return Err(Error::TruncatedPayload {
            expected,
            got: body.len(),
        });
    }
    let elems: usize = dims.iter().product();
    match dtype {
        Dtype::Float32 => {
            let data = body
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            Ok(TensorPayload::Float32(Tensor::new(dims, data)?))
        }
        Dtype::Float16 => {
            let data = body
                .chunks_exact(2)
                .map(|c| f16::from_le_bytes(c.try_into().unwrap()).to_f64())
                .collect();
            Ok(TensorPayload::Float16(Tensor::new(dims, data)?))
        }
        Dtype::PackedFp4 => {
            let inner = dims.last().copied().unwrap_or(1);
            let outer = if inner == 0 { 0 } else { elems / inner.max(1) };
            let code_bytes = elems.div_ceil(2);
            let n_scales = outer * inner.div_ceil(BLOCK);
            let codes = body[..code_bytes].to_vec();
            let scales = body[code_bytes..code_bytes + n_scales]
                .iter()
                .map(|b| E4m3::try_from_bits(*b))
                .collect::<Result<Vec<_>>>()?;
            let global = f32::from_le_bytes(
                body[code_bytes + n_scales..].try_into().unwrap(),
            );
            Ok(TensorPayload::PackedFp4(PackedFp4Tensor::from_parts(
                dims, codes, scales, global,
            )?))
        }
    }
}

pub fn write_tensor(path: impl AsRef<Path>, payload: &TensorPayload) -> Result<()> {
    fs::write(path.as_ref(), encode_tensor(payload)).map_err(|source| Error::FileIo {
        path: path.as_ref().display().to_string(),
        source,
    })
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorPayload> {
    let bytes = fs::read(path.as_ref()).map_err(|source| Error::FileIo {
        path: path.as_ref().display().to_string(),
        source,
    })?;
    decode_tensor(&bytes)
}
