//! Seeded random streams.
//!
//! Every stream is a ChaCha20 generator (`rand_chacha`) keyed by a 64-bit seed
//! and a 64-bit stream id. Identical `(seed, stream)` pairs give identical
//! sequences on every platform; distinct stream ids never overlap.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent child stream for a sub-task. Children with different
    /// `task` ids (and different parents) never share output.
    pub fn split(&self, task: u64) -> RngStream {
        let mixed = self
            .stream
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .rotate_left(17)
            ^ task.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03);
        RngStream::with_stream(self.seed, mixed)
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            p.swap(i, j);
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_equal_sequences() {
        let mut a = RngStream::new(42);
        let mut b = RngStream::new(42);
        let xa: Vec<u64> = (0..64).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..64).map(|_| b.next_u64()).collect();
        assert_eq!(xa, xb);
        let na = RngStream::new(7).normals(16);
        let nb = RngStream::new(7).normals(16);
        assert_eq!(
            na.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            nb.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn pinned_first_output() {
        // Pins the generator algorithm; a change of backend breaks this.
        let mut a = RngStream::new(0);
        let first = a.next_u64();
        let mut b = ChaCha20Rng::seed_from_u64(0);
        assert_eq!(first, b.next_u64());
    }

    #[test]
    fn split_streams_differ() {
        let root = RngStream::new(3);
        let mut c1 = root.split(1);
        let mut c2 = root.split(2);
        let a: Vec<u64> = (0..32).map(|_| c1.next_u64()).collect();
        let b: Vec<u64> = (0..32).map(|_| c2.next_u64()).collect();
        assert_ne!(a, b);
        assert!(a.iter().all(|v| !b.contains(v)));
    }

    #[test]
    fn permutation_is_permutation() {
        let mut r = RngStream::new(9);
        let mut p = r.permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}
