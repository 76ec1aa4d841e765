//! Seeded pseudo-random source.
//!
//! Backed by ChaCha8 (`rand_chacha::ChaCha8Rng`), whose output stream is
//! specified independently of platform and word size. The 64-bit seed is
//! expanded to the 256-bit ChaCha key with `SeedableRng::seed_from_u64`
//! (a PCG32 stream). Integer draws go through `u64` ranges so that results do
//! not depend on `usize` width.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.gen::<f64>()
    }

    /// Uniform integer in `[0, n)`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "Rng::below(0)");
        self.inner.gen_range(0..n as u64) as usize
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn inclusive(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
            assert_eq!(a.uniform(-1.0, 1.0).to_bits(), b.uniform(-1.0, 1.0).to_bits());
        }
        assert_ne!(Rng::new(1).next_u64(), Rng::new(2).next_u64());
    }

    #[test]
    fn ranges_are_respected() {
        let mut r = Rng::new(3);
        for _ in 0..1000 {
            let u = r.uniform(-0.5, 0.25);
            assert!((-0.5..0.25).contains(&u));
            assert!(r.below(7) < 7);
            let k = r.inclusive(3, 6);
            assert!((3..=6).contains(&k));
        }
    }

    #[test]
    fn sample_distinct_has_no_repeats() {
        let mut r = Rng::new(9);
        let mut s = r.sample_distinct(30, 6);
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 6);
        let mut v: Vec<u32> = (0..50).collect();
        r.shuffle(&mut v);
        v.sort_unstable();
        assert_eq!(v, (0..50).collect::<Vec<_>>());
    }
}
