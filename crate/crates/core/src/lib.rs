//! Desk-scale reference implementation of the numerics behind quantized
//! streaming video inference: bit-exact E2M1/E4M3 codecs, block-scaled
//! 4-bit quantization with Four-Over-Six scale search and a seeded random
//! Hadamard transform, W4A4 GEMM with LoRA composition, a chunkwise
//! quantized KV cache with key smoothing and multi-shot attention sinks,
//! balanced sequence-parallel layout and mask arithmetic, and a
//! discrete-event latency model of asynchronous streaming decoding.
//!
//! Everything runs on the CPU in plain `f64`; the point is verifiable
//! arithmetic, not throughput.

pub mod container;
pub mod error;
pub mod fp4;
pub mod fp8;
pub mod kv;
pub mod nibble;
pub mod pipeline;
pub mod qgemm;
pub mod quant;
pub mod rht;
pub mod sp;
pub mod tensor;

pub use container::{read_tensor, write_tensor, Dtype, TensorPayload};
pub use error::{Error, Result};
pub use fp4::E2m1;
pub use fp8::E4m3;
pub use kv::{
    quantize_kv_chunk, storage_report, KvCache, KvChunk, SinkState, StorageReport,
    FRAMES_PER_CHUNK,
};
pub use pipeline::{
    calibrate, closed_form_latency, simulate, CalibratedLatencies, ChunkTiming, PipelineConfig,
    PipelineMode, PipelineTrace,
};
pub use qgemm::{qmatmul, QLinear};
pub use quant::{
    quant_error_report, select_block_scale, PackedFp4Tensor, QuantMode, QuantReport, ScaleTarget,
    BLOCK,
};
pub use rht::RhtContext;
pub use sp::{
    all_to_all_backward, all_to_all_forward, comm_volume, halo_sharded_encode, logical_mask,
    natural_mask, teacher_forcing_mask, token_identity, CausalAvgEncoder, CommReport, ErrorBuffer,
    SpLayout, TokenIdentity,
};
pub use tensor::Tensor;
