//! Seeded, portable random stream.
//!
//! The generator is ChaCha with 8 rounds (`ChaCha8Rng`), keyed by expanding the
//! 64-bit seed with the PCG32-based `seed_from_u64` routine of `rand_core`.
//! Every derived quantity is computed from the raw `u64` stream with explicit
//! formulas so that another implementation of ChaCha8 reproduces it bit for bit:
//!
//! * uniform `[0, 1)`: `(x >> 11) * 2^-53`
//! * integer below `n`: rejection sampling on the top bits of `x` (see [`Rng::below`])
//! * standard normal: Box-Muller on two uniforms, cosine branch only

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// An independent stream identified by `(seed, tag, counter)`.
    ///
    /// Used to give each batch, mask draw, or parameter group its own stream so
    /// that draw order in one place cannot shift another.
    pub fn fork(seed: u64, tag: u64, counter: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ counter);
        Rng { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`. `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        // Largest multiple of n that fits; reject the tail to stay unbiased.
        let zone = u64::MAX - (u64::MAX % n + 1) % n;
        loop {
            let x = self.next_u64();
            if x <= zone {
                return x % n;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
