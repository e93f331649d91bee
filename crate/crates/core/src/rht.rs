//! Seeded random Hadamard transform over 16-element blocks.
//!
//! Each block is multiplied by `T = H_16 · diag(sign) / 4`, where `H_16` is
//! the Sylvester Hadamard matrix and `sign` is a seed-derived Rademacher
//! vector. `T` is orthonormal, so the inverse is `Tᵀ = diag(sign) · H_16 / 4`.
//! The same seed must be used on both sides of a quantize/dequantize pair.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quant::BLOCK;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct RhtContext {
    seed: u64,
    signs: [f64; BLOCK],
}

impl RhtContext {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut signs = [1.0; BLOCK];
        for s in &mut signs {
            *s = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        Self { seed, signs }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn signs(&self) -> &[f64; BLOCK] {
        &self.signs
    }

    /// `y = T · x` per block.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(x, true)
    }

    /// `x = Tᵀ · y` per block.
    pub fn inverse(&self, y: &Tensor) -> Result<Tensor> {
        self.apply(y, false)
    }

    fn apply(&self, x: &Tensor, forward: bool) -> Result<Tensor> {
        let inner = x.inner_len();
        if !inner.is_multiple_of(BLOCK) {
            return Err(Error::BlockMisalignment {
                inner,
                block: BLOCK,
            });
        }
        let mut data = x.data().to_vec();
        for block in data.chunks_mut(BLOCK) {
            if forward {
                for (v, s) in block.iter_mut().zip(&self.signs) {
                    *v *= s;
                }
                fwht16(block);
                for v in block.iter_mut() {
                    *v *= 0.25;
                }
            } else {
                fwht16(block);
                for (v, s) in block.iter_mut().zip(&self.signs) {
                    *v *= 0.25 * s;
                }
            }
        }
        Tensor::new(x.dims().to_vec(), data)
    }
}

/// In-place 16-point Walsh-Hadamard butterfly (Sylvester ordering).
fn fwht16(block: &mut [f64]) {
    debug_assert_eq!(block.len(), BLOCK);
    let mut half = 1;
    while half < BLOCK {
        let mut i = 0;
        while i < BLOCK {
            for j in i..i + half {
                let a = block[j];
                let b = block[j + half];
                block[j] = a + b;
                block[j + half] = a - b;
            }
            i += half * 2;
        }
        half *= 2;
    }
}
