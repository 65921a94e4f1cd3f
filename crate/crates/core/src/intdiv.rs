//! Unsigned 32-bit division and remainder by a divisor fixed at setup time,
//! computed with one widening multiply and shifts.
//!
//! For a divisor `d` that is not a power of two, let `l = floor(log2 d)`.
//! The multiplier `m = floor(2^(32+l) / d) + 1` gives
//! `q = mulhi(m, n) >> l` whenever the rounding error `2^(32+l) mod d` is
//! small enough. Otherwise one more bit of precision is needed: the 33-bit
//! multiplier `2^32 + m'` with `m' = floor(2^(33+l) / d) + 1 - 2^32` is
//! applied as `t = mulhi(m', n); q = (((n - t) >> 1) + t) >> l`, which is the
//! "add" form tracked by [`MagicDivider::needs_add`].

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MagicDivider {
    divisor: u32,
    /// Zero for powers of two, where the quotient is a plain shift.
    multiplier: u32,
    shift: u8,
    add: bool,
}

#[inline(always)]
fn mulhi(a: u32, b: u32) -> u32 {
    ((a as u64 * b as u64) >> 32) as u32
}

impl MagicDivider {
    pub fn new(divisor: u32) -> Result<Self> {
        if divisor == 0 {
            return Err(Error::ZeroDivisor);
        }
        let floor_log2 = 31 - divisor.leading_zeros();
        if divisor.is_power_of_two() {
            return Ok(Self { divisor, multiplier: 0, shift: floor_log2 as u8, add: false });
        }

        let numer = 1u64 << (32 + floor_log2);
        let proposed = (numer / divisor as u64) as u32;
        let rem = (numer % divisor as u64) as u32;
        let err = divisor - rem;

        if err < (1u32 << floor_log2) {
            return Ok(Self { divisor, multiplier: proposed + 1, shift: floor_log2 as u8, add: false });
        }

        // Double `proposed` to get floor(2^(33+l) / d) mod 2^32, fixing up
        // the quotient bit the doubled remainder may carry.
        let mut multiplier = proposed.wrapping_add(proposed);
        let twice_rem = rem.wrapping_add(rem);
        if twice_rem >= divisor || twice_rem < rem {
            multiplier = multiplier.wrapping_add(1);
        }
        Ok(Self { divisor, multiplier: multiplier.wrapping_add(1), shift: floor_log2 as u8, add: true })
    }

    pub fn divisor(&self) -> u32 {
        self.divisor
    }

    pub fn multiplier(&self) -> u32 {
        self.multiplier
    }

    pub fn shift(&self) -> u32 {
        self.shift as u32
    }

    pub fn needs_add(&self) -> bool {
        self.add
    }

    #[inline(always)]
    pub fn div(&self, n: u32) -> u32 {
        if self.multiplier == 0 {
            n >> self.shift
        } else if !self.add {
            mulhi(self.multiplier, n) >> self.shift
        } else {
            let t = mulhi(self.multiplier, n);
            (((n - t) >> 1) + t) >> self.shift
        }
    }

    #[inline(always)]
    pub fn rem(&self, n: u32) -> u32 {
        n - self.div(n) * self.divisor
    }

    #[inline(always)]
    pub fn div_mod(&self, n: u32) -> (u32, u32) {
        let q = self.div(n);
        (q, n - q * self.divisor)
    }
}

/// `div_mod` on a `usize` index known to fit in 32 bits.
#[inline(always)]
pub(crate) fn split(md: &MagicDivider, n: usize) -> (usize, usize) {
    debug_assert!(n <= u32::MAX as usize);
    let (q, r) = md.div_mod(n as u32);
    (q as usize, r as usize)
}
