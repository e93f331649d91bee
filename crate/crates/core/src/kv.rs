//! Chunkwise quantized KV cache with key smoothing, multi-shot attention
//! sinks, byte accounting, and windowed reconstruction.
//!
//! Keys are mean-centered per (token, head) along the head dimension before
//! quantization; the 16-bit means are stored alongside and re-added at
//! reconstruction. Both streams quantize with the scale-search recipe at
//! chunk granularity. Retention is governed by a sliding window plus two
//! sink sets: a fixed global sink at the start of the video and a
//! shot-level sink tracked by two scalar pointers, re-bound on every
//! prompt switch.

use std::collections::BTreeMap;

use half::f16;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quant::{PackedFp4Tensor, QuantMode};
use crate::tensor::Tensor;

/// Frames per temporal chunk.
pub const FRAMES_PER_CHUNK: usize = 8;

/// One quantized chunk of keys and values, shape (t_c · heads) × head_dim.
#[derive(Debug, Clone)]
pub struct KvChunk {
    pub chunk_index: usize,
    pub t_c: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub qk: PackedFp4Tensor,
    pub qv: PackedFp4Tensor,
    /// Per-(token, head) key mean along the head dimension.
    pub k_means: Vec<f16>,
}

/// Quantize one chunk. `k` and `v` are t_c × heads × head_dim.
pub fn quantize_kv_chunk(k: &Tensor, v: &Tensor, chunk_index: usize) -> Result<KvChunk> {
    if k.dims() != v.dims() {
        return Err(Error::ShapeMismatch(format!(
            "k is {:?}, v is {:?}",
            k.dims(),
            v.dims()
        )));
    }
    if k.dims().len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "expected t_c × heads × head_dim, got {:?}",
            k.dims()
        )));
    }
    if let Some(i) = k.first_non_finite().or_else(|| v.first_non_finite()) {
        return Err(Error::NonFinite { index: Some(i) });
    }
    let (t_c, heads, head_dim) = (k.dims()[0], k.dims()[1], k.dims()[2]);
    let rows = t_c * heads;

    let mut smoothed = k.data().to_vec();
    let mut k_means = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &mut smoothed[r * head_dim..(r + 1) * head_dim];
        let mean = row.iter().sum::<f64>() / head_dim as f64;
        let stored = f16::from_f64(mean);
        if !stored.is_finite() {
            // Means must survive 16-bit storage.
            return Err(Error::NonFinite {
                index: Some(r * head_dim),
            });
        }
        for v in row.iter_mut() {
            *v -= mean;
        }
        k_means.push(stored);
    }

    let k2 = Tensor::new(vec![rows, head_dim], smoothed)?;
    let v2 = v.reshaped(vec![rows, head_dim])?;
    Ok(KvChunk {
        chunk_index,
        t_c,
        heads,
        head_dim,
        qk: PackedFp4Tensor::quantize(&k2, QuantMode::ScaleSearch)?,
        qv: PackedFp4Tensor::quantize(&v2, QuantMode::ScaleSearch)?,
        k_means,
    })
}

impl KvChunk {
    /// Reconstructed keys (means re-added) and values, t_c × heads × head_dim.
    pub fn dequantize(&self) -> (Tensor, Tensor) {
        let mut k = self.qk.dequantize();
        for (r, mean) in self.k_means.iter().enumerate() {
            let m = mean.to_f64();
            for v in
                &mut k.data_mut()[r * self.head_dim..(r + 1) * self.head_dim]
            {
                *v += m;
            }
        }
        let dims = vec![self.t_c, self.heads, self.head_dim];
        (
            k.reshaped(dims.clone()).expect("same element count"),
            self.qv.dequantize().reshaped(dims).expect("same element count"),
        )
    }

    /// Quantized footprint: packed codes, block scales, global scales, and
    /// 16-bit means.
    pub fn quantized_bytes(&self) -> usize {
        self.qk.storage_bytes() + self.qv.storage_bytes() + self.k_means.len() * 2
    }
}

/// Storage accounting for one chunk against a bf16 baseline.
#[derive(Debug, Clone, Serialize)]
pub struct StorageReport {
    pub bf16_bytes: usize,
    pub code_bytes: usize,
    pub block_scale_bytes: usize,
    pub global_scale_bytes: usize,
    pub mean_bytes: usize,
    pub nvfp4_bytes: usize,
    /// bf16 over the full quantized footprint.
    pub ratio: f64,
    /// bf16 over codes + block scales only (the per-element payload).
    pub ratio_payload_only: f64,
}

pub fn storage_report(chunk: &KvChunk) -> StorageReport {
    let bf16_bytes = 4 * chunk.t_c * chunk.heads * chunk.head_dim;
    let code_bytes = chunk.qk.packed_codes().len() + chunk.qv.packed_codes().len();
    let block_scale_bytes = chunk.qk.block_scales().len() + chunk.qv.block_scales().len();
    let global_scale_bytes = 8;
    let mean_bytes = chunk.k_means.len() * 2;
    let nvfp4_bytes = code_bytes + block_scale_bytes + global_scale_bytes + mean_bytes;
    StorageReport {
        bf16_bytes,
        code_bytes,
        block_scale_bytes,
        global_scale_bytes,
        mean_bytes,
        nvfp4_bytes,
        ratio: bf16_bytes as f64 / nvfp4_bytes as f64,
        ratio_payload_only: bf16_bytes as f64 / (code_bytes + block_scale_bytes) as f64,
    }
}

/// Sink bookkeeping: a fixed global set plus a shot-level sink held as two
/// scalars, and the sliding window position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SinkState {
    /// Chunk indices pinned for the whole video (first global-sink chunks).
    pub global_sink_chunks: Vec<usize>,
    /// First chunk of the current shot.
    pub shot_start: usize,
    /// Shot sink length in chunks.
    pub shot_len: usize,
    /// Sliding window length in chunks.
    pub window_chunks: usize,
    /// Next chunk to be generated.
    pub current_chunk: usize,
}

impl SinkState {
    /// `global_sink_frames`/`shot_sink_frames` convert to chunks with an
    /// 8-frame-per-chunk ceiling.
    pub fn new(global_sink_frames: usize, shot_sink_frames: usize, window_chunks: usize) -> Self {
        let global = global_sink_frames.div_ceil(FRAMES_PER_CHUNK);
        let shot_len = shot_sink_frames.div_ceil(FRAMES_PER_CHUNK);
        SinkState {
            global_sink_chunks: (0..global).collect(),
            shot_start: 0,
            shot_len,
            window_chunks,
            current_chunk: 0,
        }
    }

    /// Sorted, deduplicated union of the global sink, the shot sink, and
    /// the sliding window, restricted to already-generated chunks.
    pub fn effective_set(&self) -> Vec<usize> {
        let t = self.current_chunk;
        let mut set: Vec<usize> = Vec::new();
        set.extend(self.global_sink_chunks.iter().copied().filter(|c| *c < t));
        let shot_end = (self.shot_start + self.shot_len).min(t);
        set.extend(self.shot_start..shot_end);
        set.extend(t.saturating_sub(self.window_chunks)..t);
        set.sort_unstable();
        set.dedup();
        set
    }

    /// Re-bind the shot sink at a scene cut. Rewinding before the current
    /// shot start is rejected.
    pub fn prompt_switch(&mut self, k: usize) -> Result<()> {
        if k < self.shot_start {
            return Err(Error::ShotRewind {
                requested: k,
                shot_start: self.shot_start,
            });
        }
        self.shot_start = k;
        Ok(())
    }
}

/// Single-writer chunk store. Appends quantize and evict eagerly; reads
/// reconstruct any retained window.
#[derive(Debug, Clone)]
pub struct KvCache {
    chunks: BTreeMap<usize, KvChunk>,
    sink: SinkState,
}

impl KvCache {
    pub fn new(sink: SinkState) -> Self {
        KvCache {
            chunks: BTreeMap::new(),
            sink,
        }
    }

    pub fn sink(&self) -> &SinkState {
        &self.sink
    }

    pub fn retained_chunks(&self) -> Vec<usize> {
        self.chunks.keys().copied().collect()
    }

    /// Effective key/value set for generating the current chunk.
    pub fn effective_set(&self) -> Vec<usize> {
        self.sink.effective_set()
    }

    /// Quantize and store the chunk for the current position, then drop
    /// everything the next step can no longer reach. Sink chunks stay
    /// pinned.
    pub fn append(&mut self, k: &Tensor, v: &Tensor) -> Result<usize> {
        let index = self.sink.current_chunk;
        let chunk = quantize_kv_chunk(k, v, index)?;
        if let Some(first) = self.chunks.values().next() {
            if (first.t_c, first.heads, first.head_dim)
                != (chunk.t_c, chunk.heads, chunk.head_dim)
            {
                return Err(Error::ShapeMismatch(format!(
                    "chunk geometry {:?} differs from cached {:?}",
                    (chunk.t_c, chunk.heads, chunk.head_dim),
                    (first.t_c, first.heads, first.head_dim)
                )));
            }
        }
        self.chunks.insert(index, chunk);
        self.sink.current_chunk += 1;
        let keep = self.sink.effective_set();
        self.chunks.retain(|idx, _| keep.binary_search(idx).is_ok());
        Ok(index)
    }

    pub fn prompt_switch(&mut self, k: usize) -> Result<()> {
        self.sink.prompt_switch(k)
    }

    /// Total quantized bytes of retained chunks. The shot pointers
    /// contribute nothing.
    pub fn cache_bytes(&self) -> usize {
        self.chunks.values().map(KvChunk::quantized_bytes).sum()
    }

    /// Concatenated reconstruction of the requested chunks in ascending
    /// order: keys with means re-added, then values.
    pub fn dequantize_window(&self, eff: &[usize]) -> Result<(Tensor, Tensor)> {
        let mut indices = eff.to_vec();
        indices.sort_unstable();
        indices.dedup();
        let mut parts = Vec::with_capacity(indices.len());
        for idx in &indices {
            let chunk = self.chunks.get(idx).ok_or(Error::MissingChunk(*idx))?;
            parts.push(chunk);
        }
        Ok(concat_chunks(&parts))
    }

    /// Same reconstruction with one thread per chunk. Output is
    /// bit-identical to the sequential path; chunk dequantization is
    /// independent and results are joined in index order.
    pub fn dequantize_window_parallel(&self, eff: &[usize]) -> Result<(Tensor, Tensor)> {
        let mut indices = eff.to_vec();
        indices.sort_unstable();
        indices.dedup();
        let mut chunks = Vec::with_capacity(indices.len());
        for idx in &indices {
            chunks.push(self.chunks.get(idx).ok_or(Error::MissingChunk(*idx))?);
        }
        let decoded: Vec<(Tensor, Tensor)> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .iter()
                .map(|c| scope.spawn(move || c.dequantize()))
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        Ok(concat_decoded(&chunks, &decoded))
    }
}

fn concat_chunks(chunks: &[&KvChunk]) -> (Tensor, Tensor) {
    let decoded: Vec<(Tensor, Tensor)> = chunks.iter().map(|c| c.dequantize()).collect();
    concat_decoded(chunks, &decoded)
}

fn concat_decoded(chunks: &[&KvChunk], decoded: &[(Tensor, Tensor)]) -> (Tensor, Tensor) {
    if chunks.is_empty() {
        return (Tensor::zeros(vec![0]), Tensor::zeros(vec![0]));
    }
    let (heads, head_dim) = (chunks[0].heads, chunks[0].head_dim);
    let total_t: usize = chunks.iter().map(|c| c.t_c).sum();
    let mut k_data = Vec::with_capacity(total_t * heads * head_dim);
    let mut v_data = Vec::with_capacity(total_t * heads * head_dim);
    for (k, v) in decoded {
        k_data.extend_from_slice(k.data());
        v_data.extend_from_slice(v.data());
    }
    (
        Tensor::new(vec![total_t, heads, head_dim], k_data).expect("consistent shapes"),
        Tensor::new(vec![total_t, heads, head_dim], v_data).expect("consistent shapes"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::quant_error_report;
    use crate::tensor::mse;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Keys with realistic per-(token, head) offsets plus noise.
    fn seeded_chunk(seed: u64, t_c: usize, heads: usize, d: usize) -> (Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let offset = Normal::new(0.0, 3.0).unwrap();
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut k = Vec::with_capacity(t_c * heads * d);
        for _ in 0..t_c * heads {
            let base: f64 = offset.sample(&mut rng);
            for _ in 0..d {
                k.push(base + noise.sample(&mut rng));
            }
        }
        let v: Vec<f64> = (0..t_c * heads * d).map(|_| noise.sample(&mut rng)).collect();
        (
            Tensor::new(vec![t_c, heads, d], k).unwrap(),
            Tensor::new(vec![t_c, heads, d], v).unwrap(),
        )
    }

    #[test]
    fn constant_rows_smooth_to_zero() {
        let d = 16;
        let k = Tensor::new(vec![2, 2, d], vec![3.5; 2 * 2 * d]).unwrap();
        let v = Tensor::zeros(vec![2, 2, d]);
        let chunk = quantize_kv_chunk(&k, &v, 0).unwrap();
        assert!(chunk.k_means.iter().all(|m| m.to_f64() == 3.5));
        assert!(chunk.qk.dequantize().data().iter().all(|x| *x == 0.0));
        let (k_back, _) = chunk.dequantize();
        assert!(k_back.data().iter().all(|x| *x == 3.5));
    }

    #[test]
    fn zero_chunk_is_zero() {
        let k = Tensor::zeros(vec![2, 2, 16]);
        let chunk = quantize_kv_chunk(&k, &k, 0).unwrap();
        assert!(chunk.k_means.iter().all(|m| m.to_f64() == 0.0));
        let (kb, vb) = chunk.dequantize();
        assert!(kb.data().iter().all(|x| *x == 0.0));
        assert!(vb.data().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn smoothing_centers_rows_exactly_and_means_store_within_1e3() {
        let (k, v) = seeded_chunk(1, 4, 2, 32);
        let chunk = quantize_kv_chunk(&k, &v, 0).unwrap();
        for r in 0..4 * 2 {
            let row = &k.data()[r * 32..(r + 1) * 32];
            let mean = row.iter().sum::<f64>() / 32.0;
            // Pre-quantization the smoothed row is centered exactly.
            let smoothed_mean: f64 = row.iter().map(|x| x - mean).sum::<f64>() / 32.0;
            assert!(smoothed_mean.abs() < 1e-12);
            // The 16-bit stored mean restores it to within 1e-3 relative.
            let restitution = (chunk.k_means[r].to_f64() - mean).abs();
            assert!(
                restitution <= 1e-3 * mean.abs().max(1.0),
                "row {r}: mean {mean}, stored {}",
                chunk.k_means[r].to_f64()
            );
        }
        // Post-quantization the stored rows stay centered up to block
        // quantization noise (a relative-scale effect, not an absolute one).
        let deq = chunk.qk.dequantize();
        for r in 0..4 * 2 {
            let stored = &deq.data()[r * 32..(r + 1) * 32];
            let mean = stored.iter().sum::<f64>() / 32.0;
            let row_max = stored.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(mean.abs() <= row_max / 6.0, "stored row {r} mean {mean}");
        }
    }

    #[test]
    fn smoothing_beats_plain_quantization_on_offset_keys() {
        for seed in 0..100 {
            let (k, v) = seeded_chunk(seed, 4, 2, 32);
            let chunk = quantize_kv_chunk(&k, &v, 0).unwrap();
            let (k_back, _) = chunk.dequantize();
            let smoothed_mse = mse(k.data(), k_back.data());
            let plain = quant_error_report(&k, QuantMode::Standard, None).unwrap();
            assert!(
                smoothed_mse <= plain.mse,
                "seed {seed}: smoothed {smoothed_mse} vs plain {}",
                plain.mse
            );
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let k = Tensor::zeros(vec![2, 2, 16]);
        let v = Tensor::zeros(vec![2, 2, 8]);
        assert!(quantize_kv_chunk(&k, &v, 0).is_err());
    }

    #[test]
    fn means_beyond_f16_range_are_rejected() {
        let k = Tensor::new(vec![1, 1, 16], vec![1.0e10; 16]).unwrap();
        let v = Tensor::zeros(vec![1, 1, 16]);
        assert!(matches!(
            quantize_kv_chunk(&k, &v, 0),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn storage_ratio_matches_byte_accounting() {
        // t_c=16, heads=2, d=16: bf16 = 2048 bytes, per-element payload
        // 2 · 512 · (1/2 + 1/16) = 576 bytes.
        let (k, v) = seeded_chunk(2, 16, 2, 16);
        let chunk = quantize_kv_chunk(&k, &v, 0).unwrap();
        let report = storage_report(&chunk);
        assert_eq!(report.bf16_bytes, 2048);
        assert_eq!(report.code_bytes + report.block_scale_bytes, 576);
        assert!((report.ratio_payload_only - 32.0 / 9.0).abs() < 1e-12);
        // Exact as a rational identity: 2048 * 9 == 576 * 32.
        assert_eq!(report.bf16_bytes * 9, (report.code_bytes + report.block_scale_bytes) * 32);
    }

    #[test]
    fn full_ratio_with_means_at_d_128() {
        let (k, v) = seeded_chunk(3, 4, 2, 128);
        let chunk = quantize_kv_chunk(&k, &v, 0).unwrap();
        let report = storage_report(&chunk);
        assert!(report.ratio >= 3.4, "ratio {}", report.ratio);
        assert!(report.ratio < 32.0 / 9.0);
    }

    #[test]
    fn effective_set_examples() {
        // Global sink {0}, shot at 5, window 4, t = 10.
        let state = SinkState {
            global_sink_chunks: vec![0],
            shot_start: 5,
            shot_len: 1,
            window_chunks: 4,
            current_chunk: 10,
        };
        assert_eq!(state.effective_set(), vec![0, 5, 6, 7, 8, 9]);

        // Early in the video the window covers both sinks; dedup applies.
        let state = SinkState {
            global_sink_chunks: vec![0],
            shot_start: 0,
            shot_len: 1,
            window_chunks: 4,
            current_chunk: 2,
        };
        assert_eq!(state.effective_set(), vec![0, 1]);
    }

    #[test]
    fn prompt_switch_rebinds_shot_only() {
        let mut state = SinkState::new(8, 8, 3);
        state.current_chunk = 12;
        state.prompt_switch(7).unwrap();
        assert_eq!(state.shot_start, 7);
        assert_eq!(state.global_sink_chunks, vec![0]);
        assert_eq!(state.effective_set(), vec![0, 7, 9, 10, 11]);
        // Switching backwards is rejected.
        assert!(state.prompt_switch(3).is_err());
        // Consecutive switches keep only the latest.
        state.prompt_switch(9).unwrap();
        state.prompt_switch(11).unwrap();
        assert_eq!(state.shot_start, 11);
        // Switching at the current chunk binds the shot there.
        state.prompt_switch(12).unwrap();
        assert_eq!(state.shot_start, 12);
    }

    #[test]
    fn footprint_bound_holds() {
        let mut state = SinkState::new(16, 8, 4);
        let bound = state.global_sink_chunks.len() + state.shot_len + state.window_chunks;
        for t in 0..64 {
            state.current_chunk = t;
            if t == 20 {
                state.prompt_switch(20).unwrap();
            }
            assert!(state.effective_set().len() <= bound);
        }
    }

    #[test]
    fn cache_roundtrip_and_eviction() {
        let mut cache = KvCache::new(SinkState::new(8, 8, 2));
        for _ in 0..6 {
            let (k, v) = seeded_chunk(7, 2, 2, 16);
            cache.append(&k, &v).unwrap();
        }
        // Retained: global sink {0}, shot {0}, window {4, 5}.
        assert_eq!(cache.retained_chunks(), vec![0, 4, 5]);
        let eff = cache.effective_set();
        assert_eq!(eff, vec![0, 4, 5]);
        let (k, v) = cache.dequantize_window(&eff).unwrap();
        assert_eq!(k.dims(), &[6, 2, 16]);
        assert_eq!(v.dims(), &[6, 2, 16]);
        // Missing chunk is a named error.
        match cache.dequantize_window(&[1]) {
            Err(Error::MissingChunk(1)) => {}
            other => panic!("expected MissingChunk(1), got {other:?}"),
        }
        // Empty request gives empty tensors.
        let (k0, v0) = cache.dequantize_window(&[]).unwrap();
        assert!(k0.is_empty() && v0.is_empty());
    }

    #[test]
    fn single_chunk_window_matches_direct_dequantization() {
        let mut cache = KvCache::new(SinkState::new(8, 8, 4));
        let (k, v) = seeded_chunk(5, 2, 2, 32);
        let idx = cache.append(&k, &v).unwrap();
        let (k_win, v_win) = cache.dequantize_window(&[idx]).unwrap();
        // Oracle: quantize the same chunk directly and dequantize it.
        let chunk = quantize_kv_chunk(&k, &v, idx).unwrap();
        let (k_direct, v_direct) = chunk.dequantize();
        assert_eq!(k_win, k_direct);
        assert_eq!(v_win, v_direct);
        // Reconstruction stays within the smoothed scale-search bound.
        assert!(mse(k.data(), k_win.data()) <= mse(k.data(), &vec![0.0; k.len()]));
    }

    #[test]
    fn parallel_window_matches_sequential_bitwise() {
        let mut cache = KvCache::new(SinkState::new(8, 8, 4));
        for seed in 0..4 {
            let (k, v) = seeded_chunk(seed, 2, 2, 16);
            cache.append(&k, &v).unwrap();
        }
        let eff = cache.effective_set();
        let (k_seq, v_seq) = cache.dequantize_window(&eff).unwrap();
        let (k_par, v_par) = cache.dequantize_window_parallel(&eff).unwrap();
        let bits = |t: &Tensor| -> Vec<u64> { t.data().iter().map(|v| v.to_bits()).collect() };
        assert_eq!(bits(&k_seq), bits(&k_par));
        assert_eq!(bits(&v_seq), bits(&v_par));
    }

    #[test]
    fn shot_pointer_moves_do_not_change_cache_bytes() {
        let mut cache = KvCache::new(SinkState::new(8, 8, 3));
        for seed in 0..8 {
            let (k, v) = seeded_chunk(seed, 2, 2, 16);
            cache.append(&k, &v).unwrap();
        }
        let before = cache.cache_bytes();
        cache.prompt_switch(cache.sink().current_chunk).unwrap();
        assert_eq!(cache.cache_bytes(), before);
    }
}
