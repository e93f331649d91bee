//! Block-scaled NVFP4 quantization.
//!
//! A tensor is stored as E2M1 codes with one E4M3 scale per 16-element
//! block along the innermost axis and a single f32 global scale, so that
//! every element reconstructs as
//!
//! ```text
//! x̂ = decode(code) * decode(block_scale) * global_scale
//! ```
//!
//! The global scale is `amax / (448 * 6)`, i.e. the tensor maximum lands on
//! the largest block-scale/code product. Two per-block recipes are
//! supported: `Standard` maps each block maximum to code magnitude 6, and
//! `ScaleSearch` additionally evaluates mapping it to 4 and keeps whichever
//! candidate reconstructs the block with lower squared error.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fp4::{E2m1, FP4_MAX};
use crate::fp8::{E4m3, FP8_MAX};
use crate::nibble::{pack_nibbles, unpack_nibbles};
use crate::rht::RhtContext;
use crate::tensor::{max_abs_diff, mse, Tensor};

/// Elements per quantization block along the innermost axis.
pub const BLOCK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    /// Block maximum maps to E2M1 magnitude 6.
    Standard,
    /// Per-block argmin-MSE choice between the 6-target and 4-target scales.
    ScaleSearch,
}

/// Which scale target a block ended up with under `ScaleSearch`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleTarget {
    Six,
    Four,
}

/// Quantized tensor: packed codes, per-block scales, one global scale.
///
/// Equality compares the quantized content (dims, codes, scales, global
/// scale). The per-block decision trace is diagnostic metadata: when both
/// scale candidates collapse to the same E4M3 value the recorded choice
/// can differ between runs that produce identical bits.
#[derive(Debug, Clone)]
pub struct PackedFp4Tensor {
    dims: Vec<usize>,
    codes: Vec<u8>,
    block_scales: Vec<E4m3>,
    global_scale: f32,
    block_decisions: Option<Vec<ScaleTarget>>,
}

impl PartialEq for PackedFp4Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self.codes == other.codes
            && self.block_scales == other.block_scales
            && self.global_scale == other.global_scale
    }
}

impl PackedFp4Tensor {
    pub fn from_parts(
        dims: Vec<usize>,
        codes: Vec<u8>,
        block_scales: Vec<E4m3>,
        global_scale: f32,
    ) -> Result<Self> {
        if !global_scale.is_finite() {
            return Err(Error::NonFinite { index: None });
        }
        let elems: usize = dims.iter().product();
        let inner = dims.last().copied().unwrap_or(1);
        let outer = elems.checked_div(inner).unwrap_or(0);
        if codes.len() != elems.div_ceil(2) {
            return Err(Error::ShapeMismatch(format!(
                "{} code bytes for {} elements",
                codes.len(),
                elems
            )));
        }
        if block_scales.len() != outer * inner.div_ceil(BLOCK) {
            return Err(Error::ShapeMismatch(format!(
                "{} block scales for dims {:?}",
                block_scales.len(),
                dims
            )));
        }
        Ok(Self {
            dims,
            codes,
            block_scales,
            global_scale,
            block_decisions: None,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_elements(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn inner_len(&self) -> usize {
        self.dims.last().copied().unwrap_or(1)
    }

    pub fn outer_len(&self) -> usize {
        self.num_elements().checked_div(self.inner_len()).unwrap_or(0)
    }

    pub fn blocks_per_row(&self) -> usize {
        self.inner_len().div_ceil(BLOCK)
    }

    pub fn num_blocks(&self) -> usize {
        self.outer_len() * self.blocks_per_row()
    }

    pub fn packed_codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn block_scales(&self) -> &[E4m3] {
        &self.block_scales
    }

    pub fn global_scale(&self) -> f32 {
        self.global_scale
    }

    /// Per-block scale decisions; `None` unless quantized with `ScaleSearch`.
    pub fn block_decisions(&self) -> Option<&[ScaleTarget]> {
        self.block_decisions.as_deref()
    }

    pub fn fraction_blocks_scale4(&self) -> f64 {
        match &self.block_decisions {
            None => 0.0,
            Some(d) if d.is_empty() => 0.0,
            Some(d) => {
                d.iter().filter(|t| **t == ScaleTarget::Four).count() as f64 / d.len() as f64
            }
        }
    }

    /// Unpacked codes in flat row-major element order.
    pub fn unpacked_codes(&self) -> Vec<E2m1> {
        unpack_nibbles(&self.codes, self.num_elements()).expect("consistent by construction")
    }

    /// Bytes for codes, block scales, and the global scale.
    pub fn storage_bytes(&self) -> usize {
        self.codes.len() + self.block_scales.len() + 4
    }

    /// Quantize a finite tensor. Blocking runs along the innermost axis.
    pub fn quantize(x: &Tensor, mode: QuantMode) -> Result<Self> {
        if let Some(idx) = x.first_non_finite() {
            return Err(Error::NonFinite { index: Some(idx) });
        }
        let inner = x.inner_len();
        let outer = x.outer_len();
        let amax = x.max_abs();
        // All-zero tensors quantize to zero blocks with unit global scale.
        // The f32 scale saturates at both ends of its range for tensors
        // whose magnitudes fall outside the representable envelope.
        let global = if amax == 0.0 {
            1.0f32
        } else {
            let g = (amax / (FP8_MAX * FP4_MAX)) as f32;
            if g == 0.0 {
                f32::from_bits(1) // smallest positive subnormal
            } else if g.is_infinite() {
                f32::MAX
            } else {
                g
            }
        };
        let gs = global as f64;

        let mut codes = Vec::with_capacity(x.len());
        let mut scales = Vec::with_capacity(outer * inner.div_ceil(BLOCK));
        let mut decisions = Vec::new();
        let record = mode == QuantMode::ScaleSearch;

        for row in 0..outer {
            let row_vals = &x.data()[row * inner..(row + 1) * inner];
            for block in row_vals.chunks(BLOCK) {
                let normalized: Vec<f64> = block.iter().map(|v| v / gs).collect();
                let (scale, block_codes, target) = quantize_block(&normalized, mode);
                scales.push(scale);
                codes.extend(block_codes);
                if record {
                    decisions.push(target);
                }
            }
        }

        Ok(Self {
            dims: x.dims().to_vec(),
            codes: pack_nibbles(&codes),
            block_scales: scales,
            global_scale: global,
            block_decisions: record.then_some(decisions),
        })
    }

    /// Elementwise reconstruction: code * block scale * global scale.
    pub fn dequantize(&self) -> Tensor {
        let inner = self.inner_len();
        let codes = self.unpacked_codes();
        let gs = self.global_scale as f64;
        let mut out = Vec::with_capacity(codes.len());
        for (i, code) in codes.iter().enumerate() {
            let row = i.checked_div(inner).unwrap_or(0);
            let block = i.checked_rem(inner).unwrap_or(0) / BLOCK;
            let scale = self.block_scales[row * self.blocks_per_row() + block].decode();
            out.push(code.decode() * scale * gs);
        }
        Tensor::new(self.dims.clone(), out).expect("dims match by construction")
    }
}

/// Cast a positive scale candidate to E4M3, promoting an underflowed zero
/// to the smallest subnormal so nonzero blocks keep a usable scale.
fn cast_scale(candidate: f64) -> E4m3 {
    let s = E4m3::encode(candidate).expect("finite candidate");
    if s.decode() == 0.0 && candidate > 0.0 {
        E4m3::MIN_SUBNORMAL
    } else {
        s
    }
}

/// Quantize one block of globally-normalized values.
fn quantize_block(normalized: &[f64], mode: QuantMode) -> (E4m3, Vec<E2m1>, ScaleTarget) {
    let block_max = normalized.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if block_max == 0.0 {
        return (E4m3::ZERO, vec![E2m1::ZERO; normalized.len()], ScaleTarget::Six);
    }
    let six = encode_with_scale(normalized, cast_scale(block_max / 6.0));
    match mode {
        QuantMode::Standard => (six.0, six.1, ScaleTarget::Six),
        QuantMode::ScaleSearch => {
            let four = encode_with_scale(normalized, cast_scale(block_max / 4.0));
            // Ties keep the 6-target encoding for its larger dynamic range.
            if four.2 < six.2 {
                (four.0, four.1, ScaleTarget::Four)
            } else {
                (six.0, six.1, ScaleTarget::Six)
            }
        }
    }
}

/// Encode a block under one scale candidate; returns the squared
/// reconstruction error alongside the codes.
fn encode_with_scale(normalized: &[f64], scale: E4m3) -> (E4m3, Vec<E2m1>, f64) {
    let s = scale.decode();
    let mut codes = Vec::with_capacity(normalized.len());
    let mut err = 0.0;
    for &v in normalized {
        let code = E2m1::encode(v / s).expect("scale is positive and v finite");
        let d = code.decode() * s - v;
        err += d * d;
        codes.push(code);
    }
    (scale, codes, err)
}

/// Evaluate both Four-Over-Six scale candidates for a single block and
/// return the winner. `block` holds up to 16 raw values; `global_scale`
/// is the tensor-level scale they are normalized by.
pub fn select_block_scale(block: &[f64], global_scale: f64) -> (E4m3, ScaleTarget) {
    assert!(block.len() <= BLOCK, "block longer than {BLOCK}");
    assert!(global_scale > 0.0, "global scale must be positive");
    let normalized: Vec<f64> = block.iter().map(|v| v / global_scale).collect();
    let (scale, _, target) = quantize_block(&normalized, QuantMode::ScaleSearch);
    (scale, target)
}

/// Error metrics of a quantize→dequantize round trip against the input.
#[derive(Debug, Clone, Serialize)]
pub struct QuantReport {
    pub mse: f64,
    pub max_abs_err: f64,
    pub fraction_blocks_scale4: f64,
}

/// Round-trip error report. With `rht` set, the tensor is rotated before
/// quantization and un-rotated after dequantization, so the report stays
/// comparable to the direct path.
pub fn quant_error_report(
    x: &Tensor,
    mode: QuantMode,
    rht: Option<&RhtContext>,
) -> Result<QuantReport> {
    let (q, reconstructed) = match rht {
        None => {
            let q = PackedFp4Tensor::quantize(x, mode)?;
            let deq = q.dequantize();
            (q, deq)
        }
        Some(ctx) => {
            let rotated = ctx.forward(x)?;
            let q = PackedFp4Tensor::quantize(&rotated, mode)?;
            let deq = ctx.inverse(&q.dequantize())?;
            (q, deq)
        }
    };
    Ok(QuantReport {
        mse: mse(x.data(), reconstructed.data()),
        max_abs_err: max_abs_diff(x.data(), reconstructed.data()),
        fraction_blocks_scale4: q.fraction_blocks_scale4(),
    })
}
