//! Browser demo bindings. Each export returns a JSON string the page
//! renders onto canvases; all computation stays in `quantstream-core`.

mod demo;

use wasm_bindgen::prelude::*;

/// Quantization explorer: seeded outlier blocks quantized three ways
/// (standard, scale search, scale search behind the random Hadamard
/// transform), with per-element reconstructions and error summaries.
#[wasm_bindgen]
pub fn quant_demo(seed: u64, blocks: usize, outlier_mag: f64) -> Result<String, JsError> {
    demo::quant_demo(seed, blocks, outlier_mag).map_err(|e| JsError::new(&e.to_string()))
}

/// Teacher-forcing mask explorer: the natural (interleaved) mask next to
/// the logical clean/noisy ordering, with token identities for axis
/// coloring.
#[wasm_bindgen]
pub fn mask_demo(ranks: usize, tokens: usize, chunks: usize) -> Result<String, JsError> {
    demo::mask_demo(ranks, tokens, chunks).map_err(|e| JsError::new(&e.to_string()))
}

/// Pipeline explorer: centralized vs streaming-async schedules for one
/// (C, t_dit, t_vae) configuration.
#[wasm_bindgen]
pub fn pipeline_demo(chunks: usize, t_dit: f64, t_vae: f64) -> Result<String, JsError> {
    demo::pipeline_demo(chunks, t_dit, t_vae).map_err(|e| JsError::new(&e.to_string()))
}
