//! Sequence-parallel geometry and token identity recovery.
//!
//! Rank p owns the clean and noisy latents of one temporal range, so the
//! interleaved global order after the collective is
//! `[clean(0), noisy(0), clean(1), noisy(1), ...]` by rank. Every
//! interleaved index maps back to (rank block, within-rank offset, temporal
//! position, clean/noisy) by pure index arithmetic; no tensor data is ever
//! permuted.

use crate::error::{Error, Result};

/// Sequence-parallel geometry. `total_tokens` counts clean plus noisy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpLayout {
    pub ranks: usize,
    pub total_tokens: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub temporal_chunks: usize,
    pub halo: usize,
}

impl SpLayout {
    pub fn new(
        ranks: usize,
        total_tokens: usize,
        heads: usize,
        head_dim: usize,
        temporal_chunks: usize,
        halo: usize,
    ) -> Result<Self> {
        if ranks == 0 || total_tokens == 0 || temporal_chunks == 0 {
            return Err(Error::Divisibility(
                "ranks, token length, and chunk count must be positive".into(),
            ));
        }
        if !total_tokens.is_multiple_of(2 * ranks) {
            return Err(Error::Divisibility(format!(
                "token length {total_tokens} not divisible by 2·P = {}",
                2 * ranks
            )));
        }
        if !heads.is_multiple_of(ranks) {
            return Err(Error::Divisibility(format!(
                "heads {heads} not divisible by P = {ranks}"
            )));
        }
        if !temporal_chunks.is_multiple_of(ranks) {
            return Err(Error::Divisibility(format!(
                "chunk count {temporal_chunks} not divisible by P = {ranks}"
            )));
        }
        if !(total_tokens / 2).is_multiple_of(temporal_chunks) {
            return Err(Error::Divisibility(format!(
                "temporal length {} not divisible by {temporal_chunks} chunks",
                total_tokens / 2
            )));
        }
        Ok(Self {
            ranks,
            total_tokens,
            heads,
            head_dim,
            temporal_chunks,
            halo,
        })
    }

    /// Clean (or noisy) tokens contributed by each rank: L / (2P).
    pub fn local_tokens(&self) -> usize {
        self.total_tokens / (2 * self.ranks)
    }

    /// Tokens each rank owns in total: clean + noisy.
    pub fn tokens_per_rank(&self) -> usize {
        self.total_tokens / self.ranks
    }

    /// Temporal tokens per chunk.
    pub fn tokens_per_chunk(&self) -> usize {
        (self.total_tokens / 2) / self.temporal_chunks
    }

    /// Temporal chunk containing temporal position `t`.
    pub fn chunk_of(&self, t: usize) -> usize {
        t / self.tokens_per_chunk()
    }
}

/// Logical identity of one interleaved token index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenIdentity {
    pub rank_block: usize,
    pub within_rank_offset: usize,
    pub temporal_position: usize,
    pub is_clean: bool,
}

/// Recover the identity of interleaved index `i`:
/// p(i) = ⌊i / 2L_loc⌋, r(i) = i mod 2L_loc,
/// t(i) = p(i)·L_loc + (r(i) mod L_loc), clean ⇔ r(i) < L_loc.
pub fn token_identity(i: usize, layout: &SpLayout) -> Result<TokenIdentity> {
    if i >= layout.total_tokens {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: layout.total_tokens,
        });
    }
    let l_loc = layout.local_tokens();
    let rank_block = i / (2 * l_loc);
    let within_rank_offset = i % (2 * l_loc);
    let temporal_position = rank_block * l_loc + (within_rank_offset % l_loc);
    Ok(TokenIdentity {
        rank_block,
        within_rank_offset,
        temporal_position,
        is_clean: within_rank_offset < l_loc,
    })
}
