//! Seeded, portable random streams.
//!
//! All randomness in the pipeline flows through [`RngStream`], a counter-based
//! ChaCha generator. Derived streams are keyed by hashing (base seed, tag,
//! index) so that e.g. each sample's augmentation draws depend only on
//! (config seed, study_id, epoch) regardless of worker scheduling.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream keyed by (base, tag): identical inputs give identical streams.
    pub fn derive(base: u64, tag: &str) -> Self {
        Self::new(derive_seed(base, tag, 0))
    }

    /// Stream keyed by (base, tag, k), e.g. (seed, study_id hash, epoch).
    pub fn derive_indexed(base: u64, tag: &str, k: u64) -> Self {
        Self::new(derive_seed(base, tag, k))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in [0, n). Panics if n == 0.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        // Rejection sampling keeps the draw unbiased.
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.rng.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Standard normal via Box-Muller.
    pub fn gauss(&mut self) -> f64 {
        let u1 = loop {
            let u = self.unit();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.unit();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

/// Deterministic sub-seed from (base, tag, k).
pub fn derive_seed(base: u64, tag: &str, k: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(k.to_le_bytes());
    let d = h.finalize();
    // Top bit cleared so derived seeds survive formats with only signed
    // 64-bit integers (e.g. TOML snapshots).
    u64::from_le_bytes([d[0], d[1], d[2], d[3], d[4], d[5], d[6], d[7]]) & (i64::MAX as u64)
}
