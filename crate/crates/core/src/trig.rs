//! Sine/cosine for arguments already wrapped into `[0, 2π)`.
//!
//! The integrator evaluates one `sincos` per oscillator per step, which is the
//! hot loop of every map. Because phases are kept wrapped, a fold to
//! `[−π/2, π/2]` plus Taylor polynomials is accurate to a few ulp of 1.0.

use core::f64::consts::{FRAC_PI_2, PI};

// 1/(2k+1)! with alternating sign, highest order first
const SIN: [f64; 10] = [
    1.0 / 121_645_100_408_832_000.0,
    -1.0 / 355_687_428_096_000.0,
    1.0 / 1_307_674_368_000.0,
    -1.0 / 6_227_020_800.0,
    1.0 / 39_916_800.0,
    -1.0 / 362_880.0,
    1.0 / 5_040.0,
    -1.0 / 120.0,
    1.0 / 6.0,
    -1.0,
];

// 1/(2k)! with alternating sign, highest order first
const COS: [f64; 11] = [
    1.0 / 2_432_902_008_176_640_000.0,
    -1.0 / 6_402_373_705_728_000.0,
    1.0 / 20_922_789_888_000.0,
    -1.0 / 87_178_291_200.0,
    1.0 / 479_001_600.0,
    -1.0 / 3_628_800.0,
    1.0 / 40_320.0,
    -1.0 / 720.0,
    1.0 / 24.0,
    -1.0 / 2.0,
    1.0,
];

/// `(sin x, cos x)` for `x ∈ [0, 2π]`. Absolute error below 1e-15.
#[inline(always)]
pub(crate) fn sincos_wrapped(x: f64) -> (f64, f64) {
    // sin x = −sin y, cos x = −cos y with y ∈ [−π, π]; folded branch-free
    // because the quadrant is unpredictable from one call to the next
    let y = x - PI;
    let a = y.abs();
    let folded = a > FRAC_PI_2;
    let r = (if folded { PI - a } else { a }).copysign(y);
    let cos_sign = if folded { 1.0 } else { -1.0 };
    let r2 = r * r;
    let mut s = SIN[0];
    for &c in &SIN[1..] {
        s = s * r2 + c;
    }
    // the sign flip of sin x = −sin y is folded into the last coefficient
    let sin = s * r;
    let mut c = COS[0];
    for &k in &COS[1..] {
        c = c * r2 + k;
    }
    (sin, cos_sign * c)
}

/// Lane-wise [`sincos_wrapped`], bit-identical per lane.
#[inline(always)]
pub(crate) fn sincos_wrapped_lanes<const L: usize>(x: &[f64; L]) -> ([f64; L], [f64; L]) {
    let y: [f64; L] = core::array::from_fn(|l| x[l] - PI);
    let r: [f64; L] = core::array::from_fn(|l| {
        let a = y[l].abs();
        (if a > FRAC_PI_2 { PI - a } else { a }).copysign(y[l])
    });
    let cos_sign: [f64; L] = core::array::from_fn(|l| if y[l].abs() > FRAC_PI_2 { 1.0 } else { -1.0 });
    let r2: [f64; L] = core::array::from_fn(|l| r[l] * r[l]);
    let mut s = [SIN[0]; L];
    for &c in &SIN[1..] {
        s = core::array::from_fn(|l| s[l] * r2[l] + c);
    }
    let mut c = [COS[0]; L];
    for &k in &COS[1..] {
        c = core::array::from_fn(|l| c[l] * r2[l] + k);
    }
    (core::array::from_fn(|l| s[l] * r[l]), core::array::from_fn(|l| cos_sign[l] * c[l]))
}
