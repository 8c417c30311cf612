//! Deterministic pseudo-random streams.
//!
//! Every random draw in this crate comes from SplitMix64: the state walks a
//! fixed 64-bit counter sequence (`state += GOLDEN_GAMMA`) and each output is
//! a bijective mix of the state. The generator is therefore counter-based,
//! cheap to seed, and produces bit-identical streams on every platform,
//! including wasm32. Derived streams (per repeat, per probe draw) come from
//! [`derive_seed`], which is the one splitting rule used across the workspace.

/// Weyl increment of the SplitMix64 sequence.
pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Finalizing mix of SplitMix64 (a bijection on u64).
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from a base seed and a stream index.
///
/// This is the documented splitting rule: repeat `r` of a sweep, or the
/// `k`-th probe draw inside one estimator call, uses
/// `derive_seed(base, k)`. Distinct indices give statistically independent
/// SplitMix64 streams.
#[inline]
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    mix64(base ^ stream.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA))
}

/// SplitMix64 generator with a cached Box-Muller spare.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
    spare_normal: Option<f64>,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 {
            state: seed,
            spare_normal: None,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in [0, 1), 53-bit resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64) * (1.0 / 9_007_199_254_740_992.0) // 2^-53
    }

    /// Uniform in (0, 1]; safe as a logarithm argument.
    #[inline]
    fn next_open_f64(&mut self) -> f64 {
        (((self.next_u64() >> 11) + 1) as f64) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform in [-bound, bound).
    #[inline]
    pub fn next_symmetric(&mut self, bound: f64) -> f64 {
        bound * (2.0 * self.next_f64() - 1.0)
    }

    /// +1 or -1 with equal probability.
    #[inline]
    pub fn next_rademacher(&mut self) -> f64 {
        if self.next_u64() >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Standard normal via Box-Muller; pairs are generated together and the
    /// second deviate is cached so the stream stays deterministic.
    pub fn next_standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.next_open_f64();
        let u2 = self.next_open_f64();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// Fisher-Yates shuffle of a slice of indices.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = (self.next_u64() % (i as u64 + 1)) as usize;
            items.swap(i, j);
        }
    }
}
