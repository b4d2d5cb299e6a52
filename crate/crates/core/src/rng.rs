//! Counter-based deterministic random numbers.
//!
//! The generator is SplitMix64 written in counter form: the `k`-th output
//! (k = 1, 2, ...) of a generator with key `seed` is
//!
//! ```text
//! mix64(seed + k * 0x9E3779B97F4A7C15)            (wrapping u64 arithmetic)
//! mix64(z) = let z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
//!            let z = (z ^ (z >> 27)) * 0x94D049BB133111EB;
//!            z ^ (z >> 31)
//! ```
//!
//! which is bit-for-bit the reference SplitMix64 stream for state `seed`.
//! Derived streams are keyed by `mix64(seed ^ mix64(stream + 0x9E3779B97F4A7C15))`,
//! so a per-frame generator depends only on the global seed and the frame
//! index, never on how many numbers the parent has produced.
//!
//! Floats take the top 53 bits: `(x >> 11) * 2^-53`. Bounded integers use
//! rejection sampling on the zone `floor(2^64 / n) * n`. Normals use the
//! Box-Muller transform on two consecutive uniforms `u1, u2` with
//! `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(z: u64) -> u64 {
    let z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    let z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeededRng {
    seed: u64,
    counter: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for sub-stream `stream` (e.g. a frame index).
    pub fn fork(&self, stream: u64) -> Self {
        Self::new(mix64(self.seed ^ mix64(stream.wrapping_add(GOLDEN_GAMMA))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(
            self.seed
                .wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`. Panics if `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = (u64::MAX / n) * n;
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// `k` distinct indices from `0..n`, in sampling order (partial Fisher-Yates).
    pub fn choose_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let k = k.min(n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
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
    fn matches_reference_splitmix64() {
        // Published SplitMix64 outputs for state 0.
        let mut rng = SeededRng::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(rng.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn seed_42_is_frozen() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        let xs: Vec<u64> = (0..64).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..64).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
        assert_eq!(xs[0], 0xBDD7_3226_2FEB_6E95);
    }

    #[test]
    fn fork_ignores_parent_position() {
        let mut a = SeededRng::new(9);
        let b = SeededRng::new(9);
        a.next_u64();
        assert_eq!(a.fork(3), b.fork(3));
        assert_ne!(b.fork(3), b.fork(4));
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = SeededRng::new(1);
        for n in [1u64, 2, 3, 7, 1000] {
            for _ in 0..200 {
                assert!(rng.below(n) < n);
            }
        }
    }

    #[test]
    fn choose_indices_distinct() {
        let mut rng = SeededRng::new(5);
        let mut idx = rng.choose_indices(50, 20);
        idx.sort_unstable();
        idx.dedup();
        assert_eq!(idx.len(), 20);
        assert!(idx.iter().all(|&i| i < 50));
    }
}
