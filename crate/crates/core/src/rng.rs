//! Seeded, counter-based random streams.
//!
//! A [`RandomSource`] names one stream: the ChaCha20 key comes from the
//! master seed and the 64-bit ChaCha stream selector is the stream id. Every
//! call that consumes randomness builds a fresh generator from the source, so
//! the same source always yields the same numbers, and sources with distinct
//! ids never share state.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

/// Purpose tags mixed into derived stream ids.
pub mod purpose {
    pub const NOISE: u64 = 0x6e6f_6973_65;
    pub const EVAL: u64 = 0x6576_616c;
    pub const TRAIN_SHUFFLE: u64 = 0x7368_7566;
    pub const TRAIN_NOISE: u64 = 0x746e_6f69;
    pub const INIT: u64 = 0x696e_6974;
    pub const AUDIT_A: u64 = 0x6175_6461;
    pub const AUDIT_B: u64 = 0x6175_6462;
    pub const DATA: u64 = 0x6461_7461;
}

const MIX_MUL: u64 = 0x9e37_79b9_7f4a_7c15;

/// One round of 64-bit multiply-xor mixing (the SplitMix64 finalizer).
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream id for `(master_seed, index, purpose)`.
pub fn derive_stream(master_seed: u64, index: u64, purpose: u64) -> u64 {
    let a = mix64(master_seed.wrapping_add(MIX_MUL));
    let b = mix64(a ^ index.wrapping_mul(MIX_MUL));
    mix64(b ^ purpose.wrapping_mul(MIX_MUL).rotate_left(17))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomSource {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RandomSource {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    /// The source for trial `index` of the given purpose.
    pub fn for_trial(master_seed: u64, index: u64, purpose: u64) -> Self {
        Self::new(master_seed, derive_stream(master_seed, index, purpose))
    }

    /// A child source, keyed by this source's stream id.
    pub fn substream(&self, index: u64, purpose: u64) -> Self {
        Self::new(
            self.master_seed,
            derive_stream(self.master_seed ^ self.stream_id, index, purpose),
        )
    }

    pub fn generator(&self) -> NoiseGenerator {
        let mut key = [0u8; 32];
        let mut s = self.master_seed;
        for chunk in key.chunks_exact_mut(8) {
            s = s.wrapping_add(MIX_MUL);
            chunk.copy_from_slice(&mix64(s).to_le_bytes());
        }
        let mut rng = ChaCha20Rng::from_seed(key);
        rng.set_stream(self.stream_id);
        NoiseGenerator { rng }
    }
}

/// Draws uniforms, Laplace and Gaussian variates from one stream.
pub struct NoiseGenerator {
    rng: ChaCha20Rng,
}

impl NoiseGenerator {
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on the open interval `(0, 1)`: `(k + ½)·2⁻⁵³`.
    pub fn uniform_open(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` (rejection sampling, no modulo bias).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.rng.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Laplace(0, b) by inverting the CDF of a uniform on `(−½, ½)`.
    pub fn laplace(&mut self, b: f64) -> f64 {
        let u = self.uniform_open() - 0.5;
        -b * u.signum() * (-2.0 * u.abs()).ln_1p()
    }

    /// A pair of independent standard normals by the Box–Muller transform.
    pub fn standard_normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        (r * c, r * s)
    }

    /// `n` i.i.d. `N(0, σ²)` draws, consuming Box–Muller pairs in order.
    pub fn gaussian_vec(&mut self, sigma: f64, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n + 1);
        while out.len() < n {
            let (a, b) = self.standard_normal_pair();
            out.push(sigma * a);
            out.push(sigma * b);
        }
        out.truncate(n);
        out
    }

    pub fn laplace_vec(&mut self, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.laplace(b)).collect()
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, v: &mut [T]) {
        for i in (1..v.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            v.swap(i, j);
        }
    }
}
