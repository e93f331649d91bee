//! Teacher-forcing attention masks.
//!
//! The visibility rule lives on logical identities: a noisy query sees
//! clean keys from strictly earlier chunks plus noisy keys of its own
//! chunk; a clean query sees clean keys from its own and earlier chunks
//! (block-causal) and never sees noise. The "natural" mask evaluates the
//! same rule directly on the interleaved post-All-to-All token order via
//! index arithmetic, so no permutation of the data is needed.

use super::layout::{token_identity, SpLayout};
use crate::error::Result;

/// Visibility of key `k` to query `q`, both given as
/// (temporal position, is_clean) with chunking applied on temporal
/// positions.
pub fn teacher_forcing_mask(
    q_t: usize,
    q_is_clean: bool,
    k_t: usize,
    k_is_clean: bool,
    tokens_per_chunk: usize,
) -> bool {
    let qc = q_t / tokens_per_chunk;
    let kc = k_t / tokens_per_chunk;
    if q_is_clean {
        k_is_clean && kc <= qc
    } else if k_is_clean {
        kc < qc
    } else {
        kc == qc
    }
}

/// Teacher-forcing visibility between two interleaved token indices.
pub fn natural_mask(i: usize, j: usize, layout: &SpLayout) -> Result<bool> {
    let q = token_identity(i, layout)?;
    let k = token_identity(j, layout)?;
    Ok(teacher_forcing_mask(
        q.temporal_position,
        q.is_clean,
        k.temporal_position,
        k.is_clean,
        layout.tokens_per_chunk(),
    ))
}

/// Identity of an index in the logical `[all clean; all noisy]` order.
#[derive(Debug, Clone, Copy)]
pub struct LogicalIndex {
    pub temporal_position: usize,
    pub is_clean: bool,
}

impl LogicalIndex {
    pub fn from_index(i: usize, total_tokens: usize) -> Self {
        let half = total_tokens / 2;
        LogicalIndex {
            temporal_position: i % half,
            is_clean: i < half,
        }
    }

    /// Position of a token identity in the logical order.
    pub fn position(temporal_position: usize, is_clean: bool, total_tokens: usize) -> usize {
        if is_clean {
            temporal_position
        } else {
            total_tokens / 2 + temporal_position
        }
    }
}

/// The mask in the logical order, for diffing against the natural mask.
pub fn logical_mask(i: usize, j: usize, total_tokens: usize, tokens_per_chunk: usize) -> bool {
    let q = LogicalIndex::from_index(i, total_tokens);
    let k = LogicalIndex::from_index(j, total_tokens);
    teacher_forcing_mask(
        q.temporal_position,
        q.is_clean,
        k.temporal_position,
        k.is_clean,
        tokens_per_chunk,
    )
}
