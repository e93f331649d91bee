//! All-to-All communication accounting for the Q/K/V exchange.
//!
//! One attention layer moves Q, K, and V once each. In bf16 that is
//! 3 · L · H · d · 2 bytes; with block-scaled 4-bit payloads it is the
//! packed codes plus one scale byte per 16-element block, 9/16 byte per
//! element when the head dimension divides evenly.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommPrecision {
    Bf16,
    Nvfp4,
}

/// Per-layer Q/K/V All-to-All payload in bytes at one precision.
pub fn qkv_payload_bytes(
    total_tokens: usize,
    heads: usize,
    head_dim: usize,
    precision: CommPrecision,
) -> u64 {
    let rows = (total_tokens * heads) as u64;
    let d = head_dim as u64;
    match precision {
        CommPrecision::Bf16 => 3 * rows * d * 2,
        CommPrecision::Nvfp4 => 3 * rows * (d.div_ceil(2) + d.div_ceil(16)),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CommReport {
    pub bf16_bytes: u64,
    pub nvfp4_bytes: u64,
    /// bf16 over nvfp4 payload.
    pub ratio: f64,
}

/// Both precisions side by side.
pub fn comm_volume(total_tokens: usize, heads: usize, head_dim: usize) -> CommReport {
    let bf16_bytes = qkv_payload_bytes(total_tokens, heads, head_dim, CommPrecision::Bf16);
    let nvfp4_bytes = qkv_payload_bytes(total_tokens, heads, head_dim, CommPrecision::Nvfp4);
    CommReport {
        bf16_bytes,
        nvfp4_bytes,
        ratio: bf16_bytes as f64 / nvfp4_bytes as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let r = comm_volume(1024, 16, 64);
        assert_eq!(r.bf16_bytes, 6_291_456);
        assert_eq!(r.nvfp4_bytes, 1_769_472);
        assert!((r.ratio - 32.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_is_exactly_32_over_9_for_aligned_head_dims() {
        for (l, h, d) in [(64, 4, 16), (128, 8, 32), (1024, 16, 128), (17, 3, 48)] {
            let r = comm_volume(l, h, d);
            // Cross-multiplied integer identity, no float tolerance needed.
            assert_eq!(r.bf16_bytes * 9, r.nvfp4_bytes * 32, "L={l} H={h} d={d}");
        }
    }

    #[test]
    fn unaligned_head_dim_pays_padding() {
        let r = comm_volume(64, 4, 20);
        assert!(r.ratio < 32.0 / 9.0);
    }
}
