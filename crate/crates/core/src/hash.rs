//! Seeded 64-bit mixing shared by every component that must agree across hosts.
//!
//! All hashing in the crate reduces to the SplitMix64 finalizer:
//!
//! ```text
//! mix64(z):
//!     z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9
//!     z = (z ^ (z >> 27)) * 0x94d049bb133111eb
//!     return z ^ (z >> 31)
//! ```
//!
//! with wrapping 64-bit multiplication. Keyed hashes are built on top of it as
//!
//! ```text
//! keyed(value, seed, lane) = mix64(mix64(seed + GOLDEN * (lane + 1)) ^ value)
//! ```
//!
//! where `GOLDEN = 0x9e3779b97f4a7c15` and all arithmetic wraps. A value is
//! mapped into `[0, len)` by the multiply-shift reduction `(h * len) >> 64`
//! computed in 128 bits.

/// The 64-bit golden-ratio increment used by SplitMix64.
pub const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of `value` under `seed` for the given independent `lane`.
#[inline]
pub fn keyed(value: u64, seed: u64, lane: u64) -> u64 {
    let key = mix64(seed.wrapping_add(GOLDEN.wrapping_mul(lane.wrapping_add(1))));
    mix64(key ^ value)
}

/// Maps a 64-bit hash onto `[0, len)` without division.
#[inline]
pub fn reduce(hash: u64, len: usize) -> usize {
    ((hash as u128 * len as u128) >> 64) as usize
}

/// Minimal SplitMix64 stream. Used where the exact bit sequence is part of the
/// cross-host contract, so it must never change with a dependency upgrade.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(state: u64) -> Self {
        Self { state }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform in `(0, 1]`, 53 bits of precision.
    #[inline]
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}
