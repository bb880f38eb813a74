//! Deterministic random streams keyed by `(seed, counter, slot)`.
//!
//! Every stream is an independent ChaCha8 keystream, so any iteration's
//! random numbers can be regenerated without replaying earlier ones.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// SplitMix64 finalizer, used to spread small integer keys over 64 bits.
pub const fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of keys into one seed.
pub fn derive_seed(keys: &[u64]) -> u64 {
    keys.iter()
        .fold(0x5eed_u64, |acc, &k| mix64(acc ^ mix64(k)))
}

/// Opens the stream for `(seed, counter, slot)`.
pub fn stream(seed: u64, counter: u64, slot: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(counter);
    rng.set_word_pos(u128::from(slot) << 64);
    rng
}

/// Uniform draw from `[0, 1)` with 53 bits of precision.
pub fn uniform01<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw from `[lo, hi)`.
pub fn uniform<R: RngCore + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform01(rng)
}

/// Standard normal draw (Box-Muller, one value per call).
pub fn normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    let u1 = 1.0 - uniform01(rng);
    let u2 = uniform01(rng);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}
