//! Branch-free `exp`/`expm1` and the activations built on them.
//!
//! Only IEEE add, multiply and divide are used, so results are identical on
//! every platform (the system libm is not), and loops over slices of these
//! vectorize.

const LOG2E: f64 = std::f64::consts::LOG2_E;
// ln 2 split so that `k · LN2_HI` is exact for |k| < 2^11.
const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
// Adding 1.5·2^52 rounds to an integer and leaves it in the low mantissa bits.
const SHIFT: f64 = 6_755_399_441_055_744.0;
const LO: f64 = -708.0;
const HI: f64 = 709.0;
/// `1/13!, 1/12!, …, 1/1!`.
const INV_FACT: [f64; 13] = [
    1.0 / 6_227_020_800.0,
    1.0 / 479_001_600.0,
    1.0 / 39_916_800.0,
    1.0 / 3_628_800.0,
    1.0 / 362_880.0,
    1.0 / 40_320.0,
    1.0 / 5_040.0,
    1.0 / 720.0,
    1.0 / 120.0,
    1.0 / 24.0,
    1.0 / 6.0,
    1.0 / 2.0,
    1.0,
];

/// `(2^k, e^r − 1)` with `x = k·ln 2 + r`, `|r| ≤ ln 2 / 2`.
#[inline(always)]
fn reduce(x: f64) -> (f64, f64) {
    let x = x.clamp(LO, HI);
    let t = x * LOG2E + SHIFT;
    let kf = t - SHIFT;
    let k = t.to_bits() as i64 - SHIFT.to_bits() as i64;
    let r = (x - kf * LN2_HI) - kf * LN2_LO;
    // Taylor series to r^13; the remainder is below 1e-17 on the range.
    let mut p = INV_FACT[0];
    for c in &INV_FACT[1..] {
        p = p * r + c;
    }
    let scale = f64::from_bits(((k + 1023) as u64) << 52);
    (scale, p * r)
}

/// `e^x`, saturating at `e^709` above and `e^-708` below.
#[inline(always)]
pub(crate) fn exp(x: f64) -> f64 {
    let (s, q) = reduce(x);
    if x.is_nan() {
        x
    } else {
        s + s * q
    }
}

/// `e^x − 1`, accurate near zero.
#[inline(always)]
pub(crate) fn expm1(x: f64) -> f64 {
    let (s, q) = reduce(x);
    if x.is_nan() {
        x
    } else {
        (s - 1.0) + s * q
    }
}

#[inline(always)]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

#[inline(always)]
pub(crate) fn tanh(x: f64) -> f64 {
    let e = expm1(2.0 * x.abs());
    let t = e / (e + 2.0);
    if x.is_nan() {
        x
    } else {
        t.copysign(x)
    }
}
