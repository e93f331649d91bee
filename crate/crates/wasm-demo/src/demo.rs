//! JSON payload builders behind the wasm exports, kept free of wasm types
//! so they test natively.

use quantstream_core::*;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

/// Seeded outlier blocks: unit-magnitude inliers, one outlier per block.
fn outlier_blocks(seed: u64, blocks: usize, outlier_mag: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0f64; blocks * BLOCK];
    for b in 0..blocks {
        let block = &mut data[b * BLOCK..(b + 1) * BLOCK];
        for v in block.iter_mut() {
            let mag = rng.random_range(0.8..1.2);
            *v = if rng.random::<bool>() { mag } else { -mag };
        }
        let pos = rng.random_range(0..BLOCK);
        let sign: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
        block[pos] = sign * outlier_mag * rng.random_range(0.85..1.15);
    }
    Tensor::new(vec![blocks, BLOCK], data).expect("consistent dims")
}

pub fn quant_demo(seed: u64, blocks: usize, outlier_mag: f64) -> Result<String> {
    let blocks = blocks.clamp(1, 64);
    let x = outlier_blocks(seed, blocks, outlier_mag.clamp(1.0, 120.0));

    let q_std = PackedFp4Tensor::quantize(&x, QuantMode::Standard)?;
    let q_search = PackedFp4Tensor::quantize(&x, QuantMode::ScaleSearch)?;
    let ctx = RhtContext::new(seed ^ 0x5eed);
    let rotated = ctx.forward(&x)?;
    let q_rht = PackedFp4Tensor::quantize(&rotated, QuantMode::ScaleSearch)?;
    let deq_rht = ctx.inverse(&q_rht.dequantize())?;

    let report_std = quant_error_report(&x, QuantMode::Standard, None)?;
    let report_search = quant_error_report(&x, QuantMode::ScaleSearch, None)?;
    let report_rht = quant_error_report(&x, QuantMode::ScaleSearch, Some(&ctx))?;

    let decisions: Vec<u8> = q_search
        .block_decisions()
        .unwrap_or(&[])
        .iter()
        .map(|d| u8::from(*d == ScaleTarget::Four))
        .collect();
    let scales: Vec<f64> = q_search.block_scales().iter().map(|s| s.decode()).collect();

    Ok(json!({
        "block_size": BLOCK,
        "values": x.data(),
        "deq_standard": q_std.dequantize().data(),
        "deq_search": q_search.dequantize().data(),
        "deq_rht": deq_rht.data(),
        "block_scales_search": scales,
        "block_uses_scale4": decisions,
        "global_scale": q_search.global_scale(),
        "mse": {
            "standard": report_std.mse,
            "search": report_search.mse,
            "rht": report_rht.mse,
        },
        "max_abs_err": {
            "standard": report_std.max_abs_err,
            "search": report_search.max_abs_err,
            "rht": report_rht.max_abs_err,
        },
        "fraction_blocks_scale4": report_search.fraction_blocks_scale4,
    })
    .to_string())
}

pub fn mask_demo(ranks: usize, tokens: usize, chunks: usize) -> Result<String> {
    let layout = SpLayout::new(ranks, tokens, ranks, 4, chunks, 0)?;
    let tpc = layout.tokens_per_chunk();
    let mut natural = Vec::with_capacity(tokens * tokens);
    let mut logical = Vec::with_capacity(tokens * tokens);
    for i in 0..tokens {
        for j in 0..tokens {
            natural.push(u8::from(natural_mask(i, j, &layout)?));
            logical.push(u8::from(logical_mask(i, j, tokens, tpc)));
        }
    }
    let identities: Vec<serde_json::Value> = (0..tokens)
        .map(|i| {
            let id = token_identity(i, &layout).expect("index in range");
            json!({
                "rank": id.rank_block,
                "t": id.temporal_position,
                "clean": id.is_clean,
                "chunk": id.temporal_position / tpc,
            })
        })
        .collect();
    Ok(json!({
        "L": tokens,
        "P": ranks,
        "chunks": chunks,
        "tokens_per_chunk": tpc,
        "natural": natural,
        "logical": logical,
        "identities": identities,
        "visible_natural": natural.iter().map(|b| *b as usize).sum::<usize>(),
    })
    .to_string())
}

pub fn pipeline_demo(chunks: usize, t_dit: f64, t_vae: f64) -> Result<String> {
    let mode_payload = |mode: PipelineMode| -> Result<serde_json::Value> {
        let config = PipelineConfig {
            chunks,
            t_dit,
            t_vae,
            mode,
        };
        let trace = simulate(&config)?;
        let schedule: Vec<serde_json::Value> = trace
            .per_chunk
            .iter()
            .map(|c| {
                json!({
                    "denoise": [c.denoise_start, c.denoise_end],
                    "decode": [c.decode_start, c.decode_end],
                })
            })
            .collect();
        Ok(json!({
            "e2e": trace.e2e_latency,
            "closed_form": closed_form_latency(&config)?,
            "peak_buffer_chunks": trace.peak_latent_buffer_chunks,
            "schedule": schedule,
        }))
    };
    Ok(json!({
        "chunks": chunks,
        "t_dit": t_dit,
        "t_vae": t_vae,
        "centralized": mode_payload(PipelineMode::Centralized)?,
        "streaming_async": mode_payload(PipelineMode::StreamingAsync)?,
    })
    .to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quant_payload_is_well_formed() {
        let raw = quant_demo(7, 8, 24.0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&raw).unwrap();
        assert_eq!(v["values"].as_array().unwrap().len(), 8 * 16);
        assert_eq!(v["block_uses_scale4"].as_array().unwrap().len(), 8);
        // On this corpus the rotation beats the direct paths.
        assert!(v["mse"]["rht"].as_f64().unwrap() < v["mse"]["standard"].as_f64().unwrap());
        assert!(v["mse"]["search"].as_f64().unwrap() <= v["mse"]["standard"].as_f64().unwrap());
    }

    #[test]
    fn mask_payload_matches_layout() {
        let raw = mask_demo(2, 16, 4).unwrap();
        let v: serde_json::Value = serde_json::from_str(&raw).unwrap();
        assert_eq!(v["natural"].as_array().unwrap().len(), 256);
        assert_eq!(v["identities"].as_array().unwrap().len(), 16);
        // Invalid layouts surface as errors.
        assert!(mask_demo(3, 16, 4).is_err());
    }

    #[test]
    fn pipeline_payload_has_both_modes() {
        let raw = pipeline_demo(10, 2.0, 1.0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&raw).unwrap();
        assert_eq!(v["centralized"]["e2e"].as_f64().unwrap(), 30.0);
        assert_eq!(v["streaming_async"]["e2e"].as_f64().unwrap(), 21.0);
        assert_eq!(
            v["streaming_async"]["schedule"].as_array().unwrap().len(),
            10
        );
    }
}
