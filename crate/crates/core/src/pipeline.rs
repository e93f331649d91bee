//! Discrete-event model of the streaming-decode pipeline.
//!
//! Two resources: a denoiser that produces latent chunks back to back and
//! a single decoder consuming them FIFO. Centralized mode denoises all
//! chunks, then decodes them sequentially, holding every latent at once.
//! Streaming-async mode overlaps the two with a bounded latent buffer:
//! when the denoiser leads, end-to-end latency collapses from
//! C·(t_dit + t_vae) to C·t_dit + t_vae, and only O(1) chunks are ever in
//! flight.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    Centralized,
    StreamingAsync,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PipelineConfig {
    pub chunks: usize,
    pub t_dit: f64,
    pub t_vae: f64,
    pub mode: PipelineMode,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunks == 0 {
            return Err(Error::InvalidConfig("chunk count must be >= 1".into()));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.t_dit) || !positive(self.t_vae) {
            return Err(Error::InvalidConfig("latencies must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChunkTiming {
    pub denoise_start: f64,
    pub denoise_end: f64,
    pub decode_start: f64,
    pub decode_end: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineTrace {
    pub per_chunk: Vec<ChunkTiming>,
    pub e2e_latency: f64,
    pub peak_latent_buffer_chunks: usize,
}

/// Run the event schedule for the configured mode.
pub fn simulate(config: &PipelineConfig) -> Result<PipelineTrace> {
    config.validate()?;
    let c = config.chunks;
    let (t_dit, t_vae) = (config.t_dit, config.t_vae);
    let mut per_chunk = Vec::with_capacity(c);
    match config.mode {
        PipelineMode::Centralized => {
            // All denoising first, then sequential decoding; every latent
            // is resident when decoding begins.
            let denoise_done = c as f64 * t_dit;
            for i in 0..c {
                let denoise_start = i as f64 * t_dit;
                let decode_start = denoise_done + i as f64 * t_vae;
                per_chunk.push(ChunkTiming {
                    denoise_start,
                    denoise_end: denoise_start + t_dit,
                    decode_start,
                    decode_end: decode_start + t_vae,
                });
            }
            Ok(PipelineTrace {
                e2e_latency: per_chunk.last().unwrap().decode_end,
                peak_latent_buffer_chunks: c,
                per_chunk,
            })
        }
        PipelineMode::StreamingAsync => {
            // Bounded buffer: a denoised-but-undecoded chunk occupies one
            // slot; the denoiser stalls when all slots are full. Capacity
            // ceil(t_vae / t_dit) + 1 keeps the decoder saturated in the
            // decoder-bound regime without unbounded backlog.
            let capacity = ((t_vae / t_dit).ceil() as usize).max(1) + 1;
            for i in 0..c {
                let prev_denoise_end = if i == 0 {
                    0.0
                } else {
                    per_chunk[i - 1].denoise_end
                };
                let slot_free = if i >= capacity {
                    per_chunk[i - capacity].decode_end
                } else {
                    0.0
                };
                let denoise_start = prev_denoise_end.max(slot_free);
                let denoise_end = denoise_start + t_dit;
                let prev_decode_end = if i == 0 {
                    0.0
                } else {
                    per_chunk[i - 1].decode_end
                };
                let decode_start = denoise_end.max(prev_decode_end);
                per_chunk.push(ChunkTiming {
                    denoise_start,
                    denoise_end,
                    decode_start,
                    decode_end: decode_start + t_vae,
                });
            }
            Ok(PipelineTrace {
                e2e_latency: per_chunk.last().unwrap().decode_end,
                peak_latent_buffer_chunks: peak_in_flight(&per_chunk),
                per_chunk,
            })
        }
    }
}

/// Max simultaneous denoised-but-undecoded chunks. At equal timestamps a
/// finishing decode frees its slot before a finishing denoise claims one.
fn peak_in_flight(timings: &[ChunkTiming]) -> usize {
    let mut events: Vec<(f64, i32)> = Vec::with_capacity(timings.len() * 2);
    for t in timings {
        events.push((t.denoise_end, 1));
        events.push((t.decode_end, -1));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut current = 0i32;
    let mut peak = 0i32;
    for (_, delta) in events {
        current += delta;
        peak = peak.max(current);
    }
    peak as usize
}

/// Closed-form end-to-end latency: C·(t_dit + t_vae) centralized,
/// C·max(t_dit, t_vae) + min(t_dit, t_vae) streaming.
pub fn closed_form_latency(config: &PipelineConfig) -> Result<f64> {
    config.validate()?;
    let c = config.chunks as f64;
    Ok(match config.mode {
        PipelineMode::Centralized => c * (config.t_dit + config.t_vae),
        PipelineMode::StreamingAsync => {
            c * config.t_dit.max(config.t_vae) + config.t_dit.min(config.t_vae)
        }
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CalibratedLatencies {
    pub t_dit: f64,
    pub t_vae: f64,
}

/// Solve per-chunk latencies from a measured centralized/streaming pair:
/// C·(t_dit + t_vae) = e2e_sync and C·t_dit + t_vae = e2e_async.
pub fn calibrate(e2e_sync: f64, e2e_async: f64, chunks: usize) -> Result<CalibratedLatencies> {
    if chunks < 2 {
        return Err(Error::InvalidConfig(
            "calibration needs at least 2 chunks".into(),
        ));
    }
    let ordered = e2e_async.is_finite() && e2e_async > 0.0 && e2e_sync > e2e_async;
    if !ordered {
        return Err(Error::InconsistentMeasurements(format!(
            "need e2e_sync > e2e_async > 0, got sync {e2e_sync}, async {e2e_async}"
        )));
    }
    let c = chunks as f64;
    let t_vae = (e2e_sync - e2e_async) / (c - 1.0);
    let t_dit = e2e_sync / c - t_vae;
    if t_vae <= 0.0 || t_dit <= 0.0 {
        return Err(Error::InconsistentMeasurements(format!(
            "solved latencies are not positive: t_dit {t_dit}, t_vae {t_vae}"
        )));
    }
    Ok(CalibratedLatencies { t_dit, t_vae })
}
