//! E4M3 8-bit float codec.
//!
//! Bit layout `S EEEE MMM`, exponent bias 7, no infinities: the top
//! exponent with mantissa 111 is NaN (rejected here), the rest of the top
//! exponent row holds normal values up to ±448. Subnormals reach down to
//! 2^-9. Encoding uses round-to-nearest-even and saturates at ±448.

use crate::error::{Error, Result};

/// Largest representable E4M3 magnitude.
pub const FP8_MAX: f64 = 448.0;

/// Smallest positive E4M3 subnormal, 2^-9.
pub const FP8_MIN_SUBNORMAL: f64 = 0.001953125;

const EXP_BIAS: i32 = 7;

/// One E4M3 code. Constructible only from finite bit patterns, so
/// `decode` is total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(transparent)]
pub struct E4m3(u8);

impl E4m3 {
    pub const ZERO: E4m3 = E4m3(0);

    /// Smallest positive subnormal code.
    pub const MIN_SUBNORMAL: E4m3 = E4m3(0x01);

    /// Validate raw bits; the two NaN patterns (0x7F, 0xFF) are rejected.
    pub fn try_from_bits(bits: u8) -> Result<E4m3> {
        if bits & 0x7F == 0x7F {
            return Err(Error::InvalidScale(bits));
        }
        Ok(E4m3(bits))
    }

    pub fn to_bits(self) -> u8 {
        self.0
    }

    /// All 254 non-NaN codes.
    pub fn all() -> impl Iterator<Item = E4m3> {
        (0u8..=255).filter(|b| b & 0x7F != 0x7F).map(E4m3)
    }

    /// Exact decoded value. Negative zero decodes to 0.0.
    pub fn decode(self) -> f64 {
        let sign = if self.0 & 0x80 != 0 { -1.0 } else { 1.0 };
        let exp = ((self.0 >> 3) & 0x0F) as i32;
        let mant = (self.0 & 0x07) as f64;
        if exp == 0 {
            if mant == 0.0 {
                return 0.0;
            }
            // subnormal: 2^(1-bias) * mant/8
            sign * (mant / 8.0) * exp2(1 - EXP_BIAS)
        } else {
            sign * (1.0 + mant / 8.0) * exp2(exp - EXP_BIAS)
        }
    }

    /// Round-to-nearest-even onto the E4M3 grid, saturating at ±448.
    /// Never emits negative zero or a NaN pattern.
    pub fn encode(x: f64) -> Result<E4m3> {
        if !x.is_finite() {
            return Err(Error::NonFinite { index: None });
        }
        let sign_bit = if x < 0.0 { 0x80u8 } else { 0 };
        let m = x.abs();
        if m >= FP8_MAX {
            return Ok(E4m3(sign_bit | 0x7E)); // ±448
        }
        if m == 0.0 {
            return Ok(E4m3(0));
        }
        // Subnormal region: below 2^-6 the grid step is 2^-9.
        if m < exp2(1 - EXP_BIAS) {
            let q = (m / FP8_MIN_SUBNORMAL).round_ties_even();
            let mant = q as u8; // q <= 8 because m < 2^-6 = 8 * 2^-9
            if mant == 0 {
                return Ok(E4m3(0));
            }
            if mant == 8 {
                return Ok(E4m3(sign_bit | 0x08)); // rounds up to 2^-6
            }
            return Ok(E4m3(sign_bit | mant));
        }
        // Normal region: exact power-of-two scaling keeps rounding exact.
        let e = floor_log2(m).clamp(1 - EXP_BIAS, 8);
        let frac = m / exp2(e); // in [1, 2)
        let mut mant = (frac * 8.0).round_ties_even() as u32; // in [8, 16]
        let mut exp = e + EXP_BIAS;
        if mant == 16 {
            mant = 8;
            exp += 1;
        }
        if exp > 15 || (exp == 15 && mant - 8 == 7) {
            return Ok(E4m3(sign_bit | 0x7E)); // saturate (m < 448 but rounds past it)
        }
        Ok(E4m3(sign_bit | ((exp as u8) << 3) | (mant as u8 - 8)))
    }
}

fn exp2(e: i32) -> f64 {
    f64::from_bits(((1023 + e) as u64) << 52)
}

/// floor(log2(m)) for finite positive normal m, from the f64 exponent field.
fn floor_log2(m: f64) -> i32 {
    ((m.to_bits() >> 52) & 0x7FF) as i32 - 1023
}
