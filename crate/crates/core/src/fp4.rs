//! E2M1 4-bit float codec.
//!
//! Bit layout `S EE M` (sign, two exponent bits with bias 1, one mantissa
//! bit). The sixteen codes decode onto {0, ±0.5, ±1, ±1.5, ±2, ±3, ±4, ±6};
//! the negative-zero pattern decodes to 0.0. Encoding rounds to the nearest
//! representable value with ties going to the code whose mantissa bit is
//! zero, and saturates at ±6.

use crate::error::{Error, Result};

/// Largest representable E2M1 magnitude.
pub const FP4_MAX: f64 = 6.0;

/// Exact decode values for the eight non-negative codes 0x0..=0x7.
const MAGNITUDES: [f64; 8] = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0];

/// One E2M1 code (valid values occupy the low 4 bits).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(transparent)]
pub struct E2m1(u8);

impl E2m1 {
    pub const ZERO: E2m1 = E2m1(0);

    /// Build a code from raw bits; anything above the low nibble is masked.
    pub fn from_bits(bits: u8) -> Self {
        E2m1(bits & 0x0F)
    }

    pub fn to_bits(self) -> u8 {
        self.0
    }

    /// All sixteen codes, negative zero included.
    pub fn all() -> impl Iterator<Item = E2m1> {
        (0u8..16).map(E2m1)
    }

    /// Exact value of this code. Negative zero decodes to 0.0.
    pub fn decode(self) -> f64 {
        let mag = MAGNITUDES[(self.0 & 0x7) as usize];
        if self.0 & 0x8 != 0 && mag != 0.0 {
            -mag
        } else {
            mag
        }
    }

    /// Round `x` to the nearest code, ties to the even (zero) mantissa bit,
    /// saturating at ±6. Non-finite input is rejected.
    pub fn encode(x: f64) -> Result<E2m1> {
        if !x.is_finite() {
            return Err(Error::NonFinite { index: None });
        }
        let m = x.abs();
        // Thresholds place every tie midpoint on the even-mantissa side.
        let mag_code: u8 = if m <= 0.25 {
            0
        } else if m < 0.75 {
            1 // 0.5
        } else if m <= 1.25 {
            2 // 1.0 (ties 0.75 and 1.25 both land here)
        } else if m < 1.75 {
            3 // 1.5
        } else if m <= 2.5 {
            4 // 2.0
        } else if m < 3.5 {
            5 // 3.0
        } else if m <= 5.0 {
            6 // 4.0
        } else {
            7 // 6.0
        };
        if mag_code == 0 {
            return Ok(E2m1(0)); // never emit negative zero
        }
        Ok(E2m1(if x < 0.0 { 0x8 | mag_code } else { mag_code }))
    }
}
