//! Position-sharded error-recycling buffer.
//!
//! Rollout errors are replayed during training to corrupt the clean
//! prefix. Under sequence parallelism each rank may only replay errors at
//! positions it owns, so the buffer is a two-dimensional bucket layout
//! indexed by local block position and diffusion timestep, with ring
//! eviction per bucket. Context corruption samples by position and
//! marginalizes over timestep; latent/noise corruption matches both.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;

use crate::error::{Error, Result};

pub const DEFAULT_BUCKET_CAPACITY: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    pub error_vec: Vec<f64>,
    pub timestep: u32,
}

#[derive(Debug, Clone)]
pub struct ErrorBuffer {
    rank: usize,
    positions_per_rank: usize,
    capacity: usize,
    /// One timestep map per owned local position.
    buckets: Vec<BTreeMap<u32, VecDeque<BufferEntry>>>,
}

impl ErrorBuffer {
    pub fn new(total_blocks: usize, ranks: usize, rank: usize) -> Result<Self> {
        if ranks == 0 || !total_blocks.is_multiple_of(ranks) {
            return Err(Error::Divisibility(format!(
                "{total_blocks} blocks not divisible by {ranks} ranks"
            )));
        }
        if rank >= ranks {
            return Err(Error::IndexOutOfRange {
                index: rank,
                len: ranks,
            });
        }
        let positions_per_rank = total_blocks / ranks;
        Ok(Self {
            rank,
            positions_per_rank,
            capacity: DEFAULT_BUCKET_CAPACITY,
            buckets: vec![BTreeMap::new(); positions_per_rank],
        })
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        assert!(capacity > 0);
        self.capacity = capacity;
        self
    }

    /// Global offset of this rank's first owned block position.
    pub fn global_offset(&self) -> usize {
        self.rank * self.positions_per_rank
    }

    pub fn positions_per_rank(&self) -> usize {
        self.positions_per_rank
    }

    fn local_of(&self, global_block: usize) -> Result<usize> {
        let start = self.global_offset();
        let end = start + self.positions_per_rank;
        if global_block < start || global_block >= end {
            return Err(Error::ForeignPosition {
                global: global_block,
                rank: self.rank,
                start,
                end,
            });
        }
        Ok(global_block - start)
    }

    /// Insert an error vector for an owned global block position, evicting
    /// the oldest entry of the (position, timestep) bucket when full.
    pub fn insert(&mut self, global_block: usize, timestep: u32, error_vec: Vec<f64>) -> Result<()> {
        let local = self.local_of(global_block)?;
        let bucket = self.buckets[local].entry(timestep).or_default();
        if bucket.len() == self.capacity {
            bucket.pop_front();
        }
        bucket.push_back(BufferEntry {
            error_vec,
            timestep,
        });
        Ok(())
    }

    /// Sample uniformly over all entries at a local position, marginalizing
    /// over timestep. `Ok(None)` signals an empty position.
    pub fn sample_context<R: Rng + ?Sized>(
        &self,
        local_position: usize,
        rng: &mut R,
    ) -> Result<Option<&BufferEntry>> {
        if local_position >= self.positions_per_rank {
            return Err(Error::IndexOutOfRange {
                index: local_position,
                len: self.positions_per_rank,
            });
        }
        let total: usize = self.buckets[local_position].values().map(VecDeque::len).sum();
        if total == 0 {
            return Ok(None);
        }
        let mut pick = rng.random_range(0..total);
        for bucket in self.buckets[local_position].values() {
            if pick < bucket.len() {
                return Ok(Some(&bucket[pick]));
            }
            pick -= bucket.len();
        }
        unreachable!("pick < total by construction")
    }

    /// Sample from the exact (position, timestep) bucket. `Ok(None)`
    /// signals an empty bucket.
    pub fn sample_matched<R: Rng + ?Sized>(
        &self,
        local_position: usize,
        timestep: u32,
        rng: &mut R,
    ) -> Result<Option<&BufferEntry>> {
        if local_position >= self.positions_per_rank {
            return Err(Error::IndexOutOfRange {
                index: local_position,
                len: self.positions_per_rank,
            });
        }
        match self.buckets[local_position].get(&timestep) {
            None => Ok(None),
            Some(bucket) if bucket.is_empty() => Ok(None),
            Some(bucket) => Ok(Some(&bucket[rng.random_range(0..bucket.len())])),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ownership_is_enforced() {
        // N_blk = 8, P = 2: rank 0 owns positions 0..4.
        let mut buf = ErrorBuffer::new(8, 2, 0).unwrap();
        assert!(buf.insert(3, 0, vec![1.0]).is_ok());
        match buf.insert(6, 0, vec![1.0]) {
            Err(Error::ForeignPosition { global: 6, rank: 0, start: 0, end: 4 }) => {}
            other => panic!("expected ForeignPosition, got {other:?}"),
        }
        let mut rank1 = ErrorBuffer::new(8, 2, 1).unwrap();
        assert!(rank1.insert(6, 0, vec![1.0]).is_ok());
        assert!(rank1.insert(3, 0, vec![1.0]).is_err());
    }

    #[test]
    fn single_entry_returned_by_both_samplers() {
        let mut buf = ErrorBuffer::new(4, 1, 0).unwrap();
        buf.insert(2, 7, vec![0.5, -0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ctx = buf.sample_context(2, &mut rng).unwrap().unwrap();
        assert_eq!(ctx.timestep, 7);
        assert_eq!(ctx.error_vec, vec![0.5, -0.5]);
        let matched = buf.sample_matched(2, 7, &mut rng).unwrap().unwrap();
        assert_eq!(matched.error_vec, vec![0.5, -0.5]);
        // Empty bucket is a signal, not an error.
        assert!(buf.sample_matched(2, 8, &mut rng).unwrap().is_none());
        assert!(buf.sample_context(1, &mut rng).unwrap().is_none());
    }

    #[test]
    fn ring_eviction_caps_bucket_size() {
        let mut buf = ErrorBuffer::new(2, 1, 0).unwrap().with_capacity(3);
        for i in 0..5 {
            buf.insert(0, 1, vec![i as f64]).unwrap();
        }
        // Oldest two evicted; the bucket holds 2, 3, 4.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..200 {
            let e = buf.sample_matched(0, 1, &mut rng).unwrap().unwrap();
            seen.insert(e.error_vec[0] as i64);
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![2, 3, 4]);
    }

    #[test]
    fn context_sampling_marginalizes_timesteps_uniformly() {
        // Two timesteps with three entries each; 10k draws should split
        // roughly evenly (χ² with 1 dof at p = 0.001 is 10.83).
        let mut buf = ErrorBuffer::new(8, 2, 1).unwrap();
        for t in [10u32, 20] {
            for i in 0..3 {
                buf.insert(4, t, vec![t as f64 + i as f64]).unwrap();
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut hits = [0usize; 2];
        let draws = 10_000;
        for _ in 0..draws {
            let e = buf.sample_context(0, &mut rng).unwrap().unwrap();
            hits[if e.timestep == 10 { 0 } else { 1 }] += 1;
        }
        let expected = draws as f64 / 2.0;
        let chi2: f64 = hits
            .iter()
            .map(|h| (*h as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 10.83, "chi2 = {chi2}, hits = {hits:?}");
    }
}
