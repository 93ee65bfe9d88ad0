//! Deterministic stream splitting.
//!
//! Every random draw in the crate comes from a ChaCha8 generator whose seed
//! is `stream_id(master, lane, replicate)`. The mixer is SplitMix64's
//! finalizer applied in a fixed nesting:
//!
//! ```text
//! stream_id(m, l, r) = mix(mix(mix(m) ^ (l + GOLDEN)) ^ (r + 2 * GOLDEN))
//! ```
//!
//! Lanes `0..d` are the process components; lanes at or above
//! [`AUX_LANE`] are reserved for auxiliary draws (Brownian clocks,
//! bootstrap resampling, quadrature sampling).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// First lane id not used by process components.
pub const AUX_LANE: u64 = 1 << 32;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_id(master: u64, lane: u64, replicate: u64) -> u64 {
    let a = mix64(master);
    let b = mix64(a ^ lane.wrapping_add(GOLDEN));
    mix64(b ^ replicate.wrapping_add(GOLDEN.wrapping_mul(2)))
}

pub fn stream(master: u64, lane: u64, replicate: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_id(master, lane, replicate))
}
