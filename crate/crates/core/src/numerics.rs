//! Deterministic scalar/vector numerics.
//!
//! Stable softmax and log-sum-exp (max-shifted), IEEE 754 binary16 rounding
//! on 64-bit carriers for the reduced-precision probe, and a seeded
//! counter-based pseudo-random generator (SplitMix64) for cross-platform
//! reproducibility.

use crate::{Error, Result};

/// Smallest positive binary16 subnormal, 2^-24.
pub const BINARY16_MIN_SUBNORMAL: f64 = 5.960_464_477_539_063e-8;
/// Largest finite binary16 value.
pub const BINARY16_MAX: f64 = 65_504.0;

/// Arithmetic precision for the weight-computation branch.
///
/// `Emulated16` rounds every intermediate arithmetic result of the tagged
/// computation to IEEE 754 binary16 (round-to-nearest-even), then widens
/// back to 64-bit for the next step. The model forward/backward pass always
/// runs in 64-bit; only the scalar weight chain is quantized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionMode {
    Full64,
    Full32,
    Emulated16,
}

impl PrecisionMode {
    /// Round one intermediate result to the carrier precision.
    #[inline]
    pub fn quantize(self, x: f64) -> f64 {
        match self {
            PrecisionMode::Full64 => x,
            PrecisionMode::Full32 => x as f32 as f64,
            PrecisionMode::Emulated16 => round_binary16(x),
        }
    }
}

/// Round a 64-bit float to the nearest IEEE 754 binary16 value, widened
/// back to 64-bit.
///
/// Ties to even; overflow saturates to ±infinity; magnitudes below half the
/// smallest subnormal (2^-25) flush to zero; NaN passes through.
pub fn round_binary16(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == 0.0 || x.is_infinite() {
        return x;
    }
    let sign = if x.is_sign_negative() { -1.0 } else { 1.0 };
    let mag = x.abs();
    // Exact floor(log2(mag)) from the exponent bits. f64 subnormals decode
    // to an exponent below -1022, which lands in the flush-to-zero branch
    // either way.
    let exp = ((mag.to_bits() >> 52) & 0x7ff) as i32 - 1023;
    // binary16 normals carry 10 fraction bits; below 2^-14 the spacing is
    // pinned at the subnormal ulp 2^-24.
    let ulp_exp = if exp < -14 { -24 } else { exp - 10 };
    let ulp = 2.0f64.powi(ulp_exp);
    // Power-of-two scaling is exact, so ties are decided on the true value.
    let rounded = (mag / ulp).round_ties_even() * ulp;
    if rounded >= 65_536.0 {
        return sign * f64::INFINITY;
    }
    sign * rounded
}

/// Numerically stable softmax (max-subtraction).
///
/// Errors on an empty vector or a non-finite entry.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    softmax_in(v, PrecisionMode::Full64)
}

/// Softmax with every intermediate arithmetic result quantized to `mode`.
///
/// Under `Full64` this is the plain stable softmax. Under `Emulated16` the
/// shifted logits, exponentials, running sum, and each quotient are all
/// rounded to binary16, which is the operation whose weight underflow the
/// reduced-precision probe measures.
pub fn softmax_in(v: &[f64], mode: PrecisionMode) -> Result<Vec<f64>> {
    let max = finite_max(v, "softmax")?;
    let mut exps = Vec::with_capacity(v.len());
    let mut sum = 0.0;
    for &x in v {
        let e = mode.quantize(mode.quantize(x - max).exp());
        sum = mode.quantize(sum + e);
        exps.push(e);
    }
    for e in &mut exps {
        *e = mode.quantize(*e / sum);
    }
    Ok(exps)
}

/// log(Σ exp(v_i)) via max shift; exact for singleton input.
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    let max = finite_max(v, "logsumexp")?;
    if v.len() == 1 {
        return Ok(v[0]);
    }
    let sum: f64 = v.iter().map(|&x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Stable logistic 1/(1+e^-z), quantizing each arithmetic step to `mode`.
///
/// Uses the sign-split form so large |z| never evaluates exp of a large
/// positive argument: for z < 0 the value is e^z/(1+e^z). Under binary16
/// emulation this is where per-pair classification weights underflow to
/// exactly zero once |z| grows past the subnormal range.
pub fn logistic_in(z: f64, mode: PrecisionMode) -> f64 {
    if z >= 0.0 {
        let e = mode.quantize((-z).exp());
        let denom = mode.quantize(1.0 + e);
        mode.quantize(1.0 / denom)
    } else {
        let e = mode.quantize(z.exp());
        let denom = mode.quantize(1.0 + e);
        mode.quantize(e / denom)
    }
}

/// Plain 64-bit stable logistic.
pub fn logistic(z: f64) -> f64 {
    logistic_in(z, PrecisionMode::Full64)
}

fn finite_max(v: &[f64], what: &str) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::InvalidInput(format!("{what}: empty vector")));
    }
    let mut max = f64::NEG_INFINITY;
    for (i, &x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::InvalidInput(format!(
                "{what}: non-finite entry {x} at index {i}"
            )));
        }
        if x > max {
            max = x;
        }
    }
    Ok(max)
}

/// Seeded counter-based pseudo-random generator (SplitMix64).
///
/// The state advances by a fixed odd increment and the output is a bijective
/// mix of the counter, so identical seeds give identical sequences on every
/// platform — the generator uses only integer arithmetic. One instance per
/// owner; never share across threads.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn seeded(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Independent stream derived from (seed, stream); streams with distinct
    /// ids never share state.
    pub fn substream(seed: u64, stream: u64) -> Self {
        Rng {
            state: mix64(seed ^ mix64(stream.wrapping_mul(GOLDEN_GAMMA))),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform index in [0, n). Panics if n == 0.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "Rng::below(0)");
        // widening multiply avoids modulo bias without rejection loops
        (((self.next_u64() as u128) * (n as u128)) >> 64) as usize
    }

    /// Approximately standard normal via a 12-term Irwin–Hall sum.
    ///
    /// Integer-and-addition only, so the stream stays platform-exact; the
    /// tails are clipped at ±6, which is irrelevant for synthetic corpora.
    pub fn normal(&mut self) -> f64 {
        let mut acc = 0.0;
        for _ in 0..12 {
            acc += self.next_f64();
        }
        acc - 6.0
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}
