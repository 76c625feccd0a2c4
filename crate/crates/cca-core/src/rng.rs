//! Counter-based deterministic random numbers.
//!
//! There is no mutable RNG state anywhere: every random value is a pure
//! function of a key (derived from the global seed and the invocation
//! site) and an element counter. Identical keys reproduce identical
//! streams on any platform and under any threading.

/// splitmix64 finalizer.
#[inline]
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Fold a list of components into a single stream key.
pub fn derive_key(parts: &[u64]) -> u64 {
    let mut acc = 0x243f_6a88_85a3_08d3u64; // arbitrary nonzero start
    for &p in parts {
        acc = mix64(acc ^ p);
    }
    acc
}

/// Uniform draw in the open interval (-1/2, 1/2).
///
/// 53 mantissa bits with a half-step offset, so the endpoints are never
/// produced.
#[inline]
pub fn uniform_pm_half(key: u64, index: u64) -> f64 {
    let bits = mix64(key ^ mix64(index.wrapping_add(0x9e37_79b9))) >> 11;
    (bits as f64 + 0.5) * (1.0 / 9007199254740992.0) - 0.5
}

/// Uniform draw in (-bound, bound).
#[inline]
pub fn uniform_sym(key: u64, index: u64, bound: f64) -> f64 {
    2.0 * bound * uniform_pm_half(key, index)
}

/// Uniform integer in [0, n).
#[inline]
pub fn uniform_index(key: u64, index: u64, n: usize) -> usize {
    debug_assert!(n > 0);
    (mix64(key ^ mix64(index ^ 0x5bf0_3635)) % n as u64) as usize
}
