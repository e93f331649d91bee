//! Nibble packing for E2M1 code streams: two codes per byte, first code in
//! the low nibble, odd-length streams padded with a zero high nibble.

use crate::error::{Error, Result};
use crate::fp4::E2m1;

pub fn pack_nibbles(codes: &[E2m1]) -> Vec<u8> {
    let mut out = Vec::with_capacity(codes.len().div_ceil(2));
    for pair in codes.chunks(2) {
        let lo = pair[0].to_bits();
        let hi = pair.get(1).map_or(0, |c| c.to_bits());
        out.push(lo | (hi << 4));
    }
    out
}

pub fn unpack_nibbles(bytes: &[u8], count: usize) -> Result<Vec<E2m1>> {
    let available = bytes.len() * 2;
    if count > available {
        return Err(Error::Truncated {
            requested: count,
            available,
        });
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let byte = bytes[i / 2];
        let bits = if i % 2 == 0 { byte & 0x0F } else { byte >> 4 };
        out.push(E2m1::from_bits(bits));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty() {
        assert!(pack_nibbles(&[]).is_empty());
        assert!(unpack_nibbles(&[], 0).unwrap().is_empty());
    }

    #[test]
    fn odd_length_pads_high_nibble() {
        let codes = [E2m1::from_bits(0x7), E2m1::from_bits(0xF), E2m1::from_bits(0x3)];
        let bytes = pack_nibbles(&codes);
        assert_eq!(bytes, vec![0xF7, 0x03]);
        assert_eq!(unpack_nibbles(&bytes, 3).unwrap(), codes);
    }

    #[test]
    fn truncated_unpack_is_an_error() {
        let bytes = pack_nibbles(&[E2m1::from_bits(1), E2m1::from_bits(2)]);
        assert!(matches!(
            unpack_nibbles(&bytes, 3),
            Err(Error::Truncated { requested: 3, available: 2 })
        ));
    }

    proptest! {
        #[test]
        fn roundtrip(bits in proptest::collection::vec(0u8..16, 0..1024)) {
            let codes: Vec<E2m1> = bits.iter().map(|b| E2m1::from_bits(*b)).collect();
            let packed = pack_nibbles(&codes);
            prop_assert_eq!(packed.len(), codes.len().div_ceil(2));
            prop_assert_eq!(unpack_nibbles(&packed, codes.len()).unwrap(), codes);
        }
    }
}
