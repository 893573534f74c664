//! Seeded random streams.
//!
//! Every random draw in the crate comes from [`SeededRng`], a ChaCha20 stream
//! (RFC 8439 block function, 20 rounds) keyed by `rand_core`'s documented
//! `seed_from_u64` expansion. Uniform doubles take the top 53 bits of a `u64`;
//! normals use the Box–Muller transform and consume draws in pairs, so the
//! stream is reproducible from any language that implements the same steps.
//!
//! Sub-seeds are derived from a root seed and a label with
//! [`derive_seed`]: `splitmix64(root ^ fnv1a64(label))`.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

const TWO_PI: f64 = std::f64::consts::TAU;

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha20Rng,
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha20Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box–Muller; the sine branch is cached for the next call.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - U lies in (0, 1], keeping ln finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = TWO_PI * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// Uniform integer in `[0, bound)` by rejection sampling on the top bits.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "below() needs a positive bound");
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }

    /// Fisher–Yates, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent sub-seed for a named stage from the root seed.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    splitmix64(root ^ fnv1a64(label.as_bytes()))
}
