//! Deterministic pseudo-random streams.
//!
//! Every stochastic choice in this workspace (weight initialization, epoch
//! shuffling, synthetic data) flows through [`Stream`], so a run is a pure
//! function of its 64-bit seed. The generator is pinned here rather than taken
//! from a crate whose output may change between versions: reproducing a stream
//! requires only this file.
//!
//! Algorithms, exactly as implemented:
//!
//! - State setup:四 xoshiro256++ words are the first four outputs of
//!   SplitMix64 seeded with the stream seed.
//! - `next_u64`: xoshiro256++ (Blackman/Vigna), `rotl(s0 + s3, 23) + s0`.
//! - `next_f64`: top 53 bits of `next_u64`, scaled to `[0, 1)`.
//! - `normal`: Box–Muller with `u1 = 1 - next_f64()` (so the log argument is
//!   in `(0, 1]`), drawing `u1` then `u2`, returning the cosine branch first
//!   and caching the sine branch for the next call.
//! - `shuffle`: Fisher–Yates from the top index down, partner drawn with
//!   [`Stream::below`].
//! - Sub-streams: `derive` reseeds with
//!   `seed ^ fnv1a(label) ^ (round + 1) * 0x9E3779B97F4A7C15`.

/// Advances a SplitMix64 state and returns the next output.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a hash of a byte string, used to turn purpose labels into seed material.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// A deterministic xoshiro256++ stream.
#[derive(Debug, Clone)]
pub struct Stream {
    state: [u64; 4],
    /// Second Box–Muller deviate held back for the next `normal` call.
    spare_normal: Option<f64>,
}

impl Stream {
    /// Creates a stream from a 64-bit seed.
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let state = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Stream {
            state,
            spare_normal: None,
        }
    }

    /// Derives an independent sub-stream for `(round, purpose)`.
    ///
    /// Used so that resuming a run re-creates exactly the stream each phase
    /// consumed, regardless of what ran before it.
    pub fn derive(seed: u64, round: u64, purpose: &str) -> Self {
        let mixed = seed
            ^ fnv1a(purpose.as_bytes())
            ^ round.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        Stream::new(mixed)
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Unbiased draw in `0..bound` by rejection.
    pub fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let raw = self.next_u64();
            if raw >= threshold {
                return raw % bound;
            }
        }
    }

    /// Standard normal draw via Box–Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        self.spare_normal = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
