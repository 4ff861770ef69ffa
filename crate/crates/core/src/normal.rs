//! Random variates drawn from raw 64-bit words: uniform phases and standard
//! normals by the Box–Muller transform.
//!
//! Two raw 64-bit words give two independent N(0, 1) draws. Every step is
//! plain arithmetic (a polynomial logarithm, a square root and
//! `sincos_wrapped`), so the same transform runs in SIMD lanes with results
//! bit-identical to the scalar version.

use core::f64::consts::{LN_2, SQRT_2, TAU};

use crate::trig::sincos_wrapped_lanes;

// 1/(2k+1), highest order first: ln m = 2·atanh f = 2 Σ f^(2k+1)/(2k+1)
const ATANH: [f64; 12] = [
    1.0 / 23.0,
    1.0 / 21.0,
    1.0 / 19.0,
    1.0 / 17.0,
    1.0 / 15.0,
    1.0 / 13.0,
    1.0 / 11.0,
    1.0 / 9.0,
    1.0 / 7.0,
    1.0 / 5.0,
    1.0 / 3.0,
    1.0,
];

const EXP_MASK: u64 = 0x7FF0_0000_0000_0000;
const ONE_BITS: u64 = 0x3FF0_0000_0000_0000;

#[inline(always)]
fn ln_lanes<const L: usize>(x: &[f64; L]) -> [f64; L] {
    let bits: [u64; L] = core::array::from_fn(|l| x[l].to_bits());
    // x = m·2^e with m in [1, 2), then folded into [√½, √2)
    let e: [f64; L] = core::array::from_fn(|l| ((bits[l] >> 52) as i64 - 1023) as f64);
    let m: [f64; L] = core::array::from_fn(|l| f64::from_bits((bits[l] & !EXP_MASK) | ONE_BITS));
    let big: [bool; L] = core::array::from_fn(|l| m[l] > SQRT_2);
    let m: [f64; L] = core::array::from_fn(|l| if big[l] { m[l] * 0.5 } else { m[l] });
    let e: [f64; L] = core::array::from_fn(|l| if big[l] { e[l] + 1.0 } else { e[l] });
    let f: [f64; L] = core::array::from_fn(|l| (m[l] - 1.0) / (m[l] + 1.0));
    let f2: [f64; L] = core::array::from_fn(|l| f[l] * f[l]);
    let mut p = [ATANH[0]; L];
    for &c in &ATANH[1..] {
        p = core::array::from_fn(|l| p[l] * f2[l] + c);
    }
    core::array::from_fn(|l| e[l] * LN_2 + 2.0 * f[l] * p[l])
}

// all three are correctly rounded, so the choice never changes a result
#[cfg(feature = "std")]
#[inline(always)]
fn sqrt(x: f64) -> f64 {
    extern crate std;
    x.sqrt()
}

#[cfg(all(not(feature = "std"), target_arch = "x86_64"))]
#[inline(always)]
fn sqrt(x: f64) -> f64 {
    use core::arch::x86_64::{_mm_cvtsd_f64, _mm_set_sd, _mm_sqrt_pd};
    // SAFETY: SSE2 is part of the x86_64 baseline
    unsafe { _mm_cvtsd_f64(_mm_sqrt_pd(_mm_set_sd(x))) }
}

#[cfg(all(not(feature = "std"), not(target_arch = "x86_64")))]
#[inline(always)]
fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

/// Uniform on `[0, 1)` with 52 random bits.
#[inline(always)]
fn unit(word: u64) -> f64 {
    f64::from_bits(ONE_BITS | (word >> 12)) - 1.0
}

/// Uniform phase in `[0, 2π)` from the top 53 bits of `word`.
#[inline(always)]
pub(crate) fn phase_from_word(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64) * TAU
}

/// Two independent standard normals from two uniformly random words.
#[inline(always)]
pub(crate) fn box_muller(a: u64, b: u64) -> (f64, f64) {
    let (z0, z1) = box_muller_lanes(&[a], &[b]);
    (z0[0], z1[0])
}

/// Lane-wise [`box_muller`].
#[inline(always)]
pub(crate) fn box_muller_lanes<const L: usize>(a: &[u64; L], b: &[u64; L]) -> ([f64; L], [f64; L]) {
    // 1 − u lies in (0, 1], so the logarithm is finite
    let u: [f64; L] = core::array::from_fn(|l| 1.0 - unit(a[l]));
    let lnu = ln_lanes(&u);
    let r: [f64; L] = core::array::from_fn(|l| sqrt(-2.0 * lnu[l]));
    let theta: [f64; L] = core::array::from_fn(|l| TAU * unit(b[l]));
    let (s, c) = sincos_wrapped_lanes(&theta);
    (core::array::from_fn(|l| r[l] * c[l]), core::array::from_fn(|l| r[l] * s[l]))
}

/// Xoshiro256++ advanced in `L` independent lanes.
///
/// Lane `l` produces exactly the sequence of `rand_xoshiro::Xoshiro256PlusPlus`
/// seeded with the same state words.
#[derive(Debug, Clone)]
pub(crate) struct XoshiroLanes<const L: usize> {
    s: [[u64; L]; 4],
}

impl<const L: usize> XoshiroLanes<L> {
    pub(crate) fn new(states: [[u64; 4]; L]) -> Self {
        XoshiroLanes { s: core::array::from_fn(|w| core::array::from_fn(|l| states[l][w])) }
    }

    #[inline(always)]
    pub(crate) fn next(&mut self) -> [u64; L] {
        let [s0, s1, s2, s3] = &mut self.s;
        let out: [u64; L] = core::array::from_fn(|l| s0[l].wrapping_add(s3[l]).rotate_left(23).wrapping_add(s0[l]));
        let t: [u64; L] = core::array::from_fn(|l| s1[l] << 17);
        *s2 = core::array::from_fn(|l| s2[l] ^ s0[l]);
        *s3 = core::array::from_fn(|l| s3[l] ^ s1[l]);
        *s1 = core::array::from_fn(|l| s1[l] ^ s2[l]);
        *s0 = core::array::from_fn(|l| s0[l] ^ s3[l]);
        *s2 = core::array::from_fn(|l| s2[l] ^ t[l]);
        *s3 = core::array::from_fn(|l| s3[l].rotate_left(45));
        out
    }
}
