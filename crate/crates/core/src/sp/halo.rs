//! Exact halo-sharded causal encoding.
//!
//! The stand-in encoder is a strictly causal moving average with receptive
//! field R over the frame axis (zero-padded at the sequence start). Each
//! rank encodes its F/P local frames plus an h-frame left halo, discards
//! the halo outputs, and keeps exactly its local latent chunk. As long as
//! h ≥ R − 1 the concatenation over ranks is bit-identical to encoding the
//! full sequence, at per-rank cost F/P + h encoder evaluations (F/P on
//! rank 0, which starts at the sequence boundary).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Causal FIR moving average over frames; latent count equals frame count.
#[derive(Debug, Clone, Copy)]
pub struct CausalAvgEncoder {
    pub receptive_field: usize,
}

impl CausalAvgEncoder {
    pub fn new(receptive_field: usize) -> Self {
        assert!(receptive_field >= 1);
        Self { receptive_field }
    }

    /// Encode output positions `[start, end)` of a frame sequence.
    /// Frames before index 0 are treated as zero.
    fn encode_range(&self, frames: &Tensor, start: isize, end: usize) -> Tensor {
        let width = frames.inner_len();
        let r = self.receptive_field as isize;
        let mut out = Vec::with_capacity((end as isize - start).max(0) as usize * width);
        for pos in start..end as isize {
            for u in 0..width {
                let mut acc = 0.0;
                for back in 0..r {
                    let src = pos - back;
                    if src >= 0 {
                        acc += frames.data()[src as usize * width + u];
                    }
                }
                out.push(acc / r as f64);
            }
        }
        Tensor::new(vec![out.len() / width, width], out).expect("consistent width")
    }

    /// Full-sequence encoding, the oracle the sharded path must match.
    pub fn encode_full(&self, frames: &Tensor) -> Tensor {
        self.encode_range(frames, 0, frames.outer_len())
    }
}

/// Per-rank latent chunks plus the evaluation counters.
#[derive(Debug, Clone)]
pub struct ShardedEncoding {
    pub rank_latents: Vec<Tensor>,
    /// Encoder output evaluations performed by each rank.
    pub frames_encoded_per_rank: Vec<usize>,
}

impl ShardedEncoding {
    /// Concatenate rank latents over the frame axis.
    pub fn concatenated(&self) -> Tensor {
        let width = self.rank_latents[0].inner_len();
        let mut data = Vec::new();
        for t in &self.rank_latents {
            data.extend_from_slice(t.data());
        }
        Tensor::new(vec![data.len() / width, width], data).expect("consistent width")
    }
}

/// Shard a frame sequence (F × width) over `ranks`, encoding each local
/// chunk with an h-frame left halo.
pub fn halo_sharded_encode(
    frames: &Tensor,
    ranks: usize,
    halo: usize,
    encoder: &CausalAvgEncoder,
) -> Result<ShardedEncoding> {
    let f = frames.outer_len();
    if ranks == 0 || !f.is_multiple_of(ranks) {
        return Err(Error::Divisibility(format!(
            "frame count {f} not divisible by {ranks} ranks"
        )));
    }
    if halo + 1 < encoder.receptive_field {
        return Err(Error::HaloTooSmall {
            halo,
            required: encoder.receptive_field - 1,
        });
    }
    let local = f / ranks;
    let width = frames.inner_len();
    let mut rank_latents = Vec::with_capacity(ranks);
    let mut counters = Vec::with_capacity(ranks);
    for p in 0..ranks {
        let local_start = p * local;
        // Rank 0 sits at the sequence boundary and needs no halo; other
        // ranks evaluate (and discard) h extra leading positions.
        let start = if p == 0 {
            0
        } else {
            local_start as isize - halo as isize
        };
        let encoded = encoder.encode_range(frames, start, local_start + local);
        let produced = encoded.outer_len();
        counters.push(produced);
        let discard = produced - local;
        let kept = encoded.data()[discard * width..].to_vec();
        rank_latents.push(Tensor::new(vec![local, width], kept)?);
    }
    Ok(ShardedEncoding {
        rank_latents,
        frames_encoded_per_rank: counters,
    })
}
