//! Counter-based seed derivation.
//!
//! All randomness in a run flows from one root seed through [`mix`]: every
//! environment episode and every sampling RNG gets its own derived stream, so
//! results do not depend on rollout scheduling or iteration order.

/// SplitMix64 finalizer. Bijective on `u64`, good avalanche behavior.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream from `seed` and a stream index.
///
/// `mix(seed, a) == mix(seed, b)` only if `a == b`; nesting calls
/// (`mix(mix(seed, task), member)`) extends the key.
pub fn mix(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

/// Draws the `counter`-th value of the stream as an integer in `0..modulus`.
pub fn draw_mod(seed: u64, counter: u64, modulus: usize) -> usize {
    debug_assert!(modulus > 0);
    (mix(seed, counter) % modulus as u64) as usize
}
