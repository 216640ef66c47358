//! Seeded sample streams.
//!
//! Every stream is ChaCha20 keyed by the 64-bit run seed (little-endian in the
//! first 8 key bytes, the remaining 24 bytes zero) with the 64-bit stream id
//! set to the FNV-1a hash of a text tag. `next_u64` returns keystream words
//! in order; uniforms are `(x >> 11) · 2^−53`. These rules are part of the
//! output contract, so any implementation can regenerate the same samples.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub struct Stream(ChaCha20Rng);

pub fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Stream {
    pub fn new(seed: u64, tag: &str) -> Stream {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut rng = ChaCha20Rng::from_seed(key);
        rng.set_stream(fnv1a(tag));
        Stream(rng)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Integer in `0..n` by multiply-shift (bias below `n / 2^64`).
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// `+1` or `−1` from the top bit.
    pub fn spin(&mut self) -> i8 {
        if self.next_u64() >> 63 == 0 {
            1
        } else {
            -1
        }
    }

    /// `k` distinct indices from `0..n`, in draw order (partial Fisher–Yates).
    pub fn choose(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        let k = k.min(n);
        for i in 0..k {
            let j = i + self.below(n - i);
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_separated() {
        let a: Vec<u64> = (0..4).map({
            let mut s = Stream::new(7, "x");
            move |_| s.next_u64()
        }).collect();
        let mut s = Stream::new(7, "x");
        let b: Vec<u64> = (0..4).map(|_| s.next_u64()).collect();
        assert_eq!(a, b);
        let mut t = Stream::new(7, "y");
        assert_ne!(t.next_u64(), a[0]);
        let mut u = Stream::new(8, "x");
        assert_ne!(u.next_u64(), a[0]);
    }

    #[test]
    fn uniform_range_and_choice() {
        let mut s = Stream::new(1, "u");
        for _ in 0..1000 {
            let x = s.uniform();
            assert!((0.0..1.0).contains(&x));
        }
        let mut c = s.choose(10, 10);
        c.sort();
        assert_eq!(c, (0..10).collect::<Vec<_>>());
    }
}
