//! Simulated Ulysses All-to-All over in-memory rank slots.
//!
//! Forward exchanges sequence sharding for head sharding: every rank
//! starts with its (L/P) × H × d slice and ends with the full L-token
//! sequence over H/P heads. Backward is the exact inverse.

use super::layout::SpLayout;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_shapes(x: &[Tensor], layout: &SpLayout, dims: &[usize]) -> Result<()> {
    if x.len() != layout.ranks {
        return Err(Error::ShapeMismatch(format!(
            "{} rank slots for P = {}",
            x.len(),
            layout.ranks
        )));
    }
    for (p, t) in x.iter().enumerate() {
        if t.dims() != dims {
            return Err(Error::ShapeMismatch(format!(
                "rank {p} tensor is {:?}, expected {:?}",
                t.dims(),
                dims
            )));
        }
    }
    Ok(())
}

/// (L/P) × H × d per rank  →  L × (H/P) × d per rank.
pub fn all_to_all_forward(x: &[Tensor], layout: &SpLayout) -> Result<Vec<Tensor>> {
    let (l, h, d) = (layout.total_tokens, layout.heads, layout.head_dim);
    let (lp, hp) = (l / layout.ranks, h / layout.ranks);
    check_shapes(x, layout, &[lp, h, d])?;
    let mut out = Vec::with_capacity(layout.ranks);
    for q in 0..layout.ranks {
        let mut data = Vec::with_capacity(l * hp * d);
        for token in 0..l {
            let src_rank = token / lp;
            let local = token % lp;
            for head in 0..hp {
                let global_head = q * hp + head;
                let base = (local * h + global_head) * d;
                data.extend_from_slice(&x[src_rank].data()[base..base + d]);
            }
        }
        out.push(Tensor::new(vec![l, hp, d], data)?);
    }
    Ok(out)
}

/// L × (H/P) × d per rank  →  (L/P) × H × d per rank. Inverse of forward.
pub fn all_to_all_backward(y: &[Tensor], layout: &SpLayout) -> Result<Vec<Tensor>> {
    let (l, h, d) = (layout.total_tokens, layout.heads, layout.head_dim);
    let (lp, hp) = (l / layout.ranks, h / layout.ranks);
    check_shapes(y, layout, &[l, hp, d])?;
    let mut out = Vec::with_capacity(layout.ranks);
    for p in 0..layout.ranks {
        let mut data = Vec::with_capacity(lp * h * d);
        for local in 0..lp {
            let token = p * lp + local;
            for global_head in 0..h {
                let q = global_head / hp;
                let head = global_head % hp;
                let base = (token * hp + head) * d;
                data.extend_from_slice(&y[q].data()[base..base + d]);
            }
        }
        out.push(Tensor::new(vec![lp, h, d], data)?);
    }
    Ok(out)
}

/// Concatenate the per-rank sequence shards into the interleaved global
/// L × H × d sequence (the gather oracle for the collective).
pub fn gather_interleaved(x: &[Tensor], layout: &SpLayout) -> Result<Tensor> {
    let (l, h, d) = (layout.total_tokens, layout.heads, layout.head_dim);
    check_shapes(x, layout, &[l / layout.ranks, h, d])?;
    let mut data = Vec::with_capacity(l * h * d);
    for t in x {
        data.extend_from_slice(t.data());
    }
    Tensor::new(vec![l, h, d], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_shards(layout: &SpLayout, seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..layout.ranks)
            .map(|_| {
                let len = layout.tokens_per_rank() * layout.heads * layout.head_dim;
                let data: Vec<f64> = (0..len).map(|_| rng.random_range(-4.0..4.0)).collect();
                Tensor::new(
                    vec![layout.tokens_per_rank(), layout.heads, layout.head_dim],
                    data,
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn single_rank_is_a_noop() {
        let layout = SpLayout::new(1, 8, 4, 2, 1, 0).unwrap();
        let x = random_shards(&layout, 1);
        let y = all_to_all_forward(&x, &layout).unwrap();
        // With P = 1 the forward view is the same data in the same order.
        assert_eq!(y[0].data(), x[0].data());
    }

    #[test]
    fn gathering_head_shards_reconstructs_the_global_sequence() {
        let layout = SpLayout::new(2, 8, 4, 2, 2, 0).unwrap();
        let x = random_shards(&layout, 2);
        let y = all_to_all_forward(&x, &layout).unwrap();
        let global = gather_interleaved(&x, &layout).unwrap();
        let (l, h, d, hp) = (8, 4, 2, 2);
        for token in 0..l {
            for head in 0..h {
                for u in 0..d {
                    let rank = head / hp;
                    let got = y[rank].data()[(token * hp + head % hp) * d + u];
                    let want = global.data()[(token * h + head) * d + u];
                    assert_eq!(got, want);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn backward_inverts_forward(seed in 0u64..1000, p in prop::sample::select(vec![1usize, 2, 4])) {
            let layout = SpLayout::new(p, 8 * p, 4 * p, 3, p, 0).unwrap();
            let x = random_shards(&layout, seed);
            let y = all_to_all_forward(&x, &layout).unwrap();
            let back = all_to_all_backward(&y, &layout).unwrap();
            for (orig, restored) in x.iter().zip(&back) {
                prop_assert_eq!(orig.data(), restored.data());
            }
        }
    }
}
