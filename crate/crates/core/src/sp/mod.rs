//! Sequence-parallel layout arithmetic for paired clean/noisy streams:
//! token identity recovery on the interleaved post-All-to-All order, the
//! teacher-forcing mask evaluated natively on that order, the simulated
//! All-to-All collective, exact halo-sharded causal encoding, All-to-All
//! communication accounting, and the position-sharded error-recycling
//! buffer.

mod all_to_all;
mod buffer;
mod comm;
mod halo;
mod layout;
mod mask;

pub use all_to_all::{all_to_all_backward, all_to_all_forward, gather_interleaved};
pub use buffer::{BufferEntry, ErrorBuffer};
pub use comm::{comm_volume, qkv_payload_bytes, CommPrecision, CommReport};
pub use halo::{halo_sharded_encode, CausalAvgEncoder, ShardedEncoding};
pub use layout::{token_identity, SpLayout, TokenIdentity};
pub use mask::{logical_mask, natural_mask, teacher_forcing_mask, LogicalIndex};
