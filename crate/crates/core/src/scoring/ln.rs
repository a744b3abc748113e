//! Branch-free natural logarithm for the entropy hot loops.
//!
//! Valid for positive normal inputs, which is all the clamped probabilities
//! ever are. Error is below one ulp; unlike the libm call it inlines, so
//! LLVM can vectorise loops over probability maps.

// fdlibm's constants, written to the digits that pin each bit pattern.
#![allow(clippy::excessive_precision)]

const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-01;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
const LG1: f64 = 6.666_666_666_666_735_130e-01;
const LG2: f64 = 3.999_999_999_940_941_908e-01;
const LG3: f64 = 2.857_142_874_366_239_149e-01;
const LG4: f64 = 2.222_219_843_214_978_396e-01;
const LG5: f64 = 1.818_357_216_161_805_012e-01;
const LG6: f64 = 1.531_383_769_920_937_332e-01;
const LG7: f64 = 1.479_819_860_511_658_591e-01;

/// `ln(x)` for positive normal `x`.
#[inline(always)]
pub fn ln(x: f64) -> f64 {
    let bits = x.to_bits();
    let hx = (bits >> 32) as u32;
    let mut k = ((hx >> 20) as i32) - 1023;
    let mant = hx & 0x000f_ffff;
    // Pick the binade that puts the mantissa in [sqrt(2)/2, sqrt(2)).
    let i = (mant.wrapping_add(0x95f64)) & 0x0010_0000;
    let high = u64::from(mant | (i ^ 0x3ff0_0000));
    k += (i >> 20) as i32;
    let m = f64::from_bits((high << 32) | (bits & 0xffff_ffff));
    let f = m - 1.0;
    let hfsq = 0.5 * f * f;
    let s = f / (2.0 + f);
    let z = s * s;
    let w = z * z;
    let t1 = w * (LG2 + w * (LG4 + w * LG6));
    let t2 = z * (LG1 + w * (LG3 + w * (LG5 + w * LG7)));
    let r = t2 + t1;
    let dk = f64::from(k);
    s * (hfsq + r) + dk * LN2_LO - hfsq + f + dk * LN2_HI
}
