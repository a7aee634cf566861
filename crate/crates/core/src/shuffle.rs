//! Pinned seeded permutation used for corpus splits and epoch batch order.
//!
//! The generator is SplitMix64 (Steele, Lea & Flood 2014) with the standard
//! constants. A permutation of `0..n` is produced by the Durstenfeld form of
//! Fisher–Yates: for `i` from `n - 1` down to `1`, draw `j` uniformly from
//! `0..=i` and swap positions `i` and `j`. Uniform draws use rejection
//! sampling: with `bound = i + 1` and `zone = (u64::MAX / bound) * bound`,
//! raw outputs `>= zone` are discarded and the result is `raw % bound`.
//!
//! Changing any of this changes every split, so it is frozen by tests.

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform value in `0..bound`.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let zone = (u64::MAX / bound) * bound;
        loop {
            let r = self.next_u64();
            if r < zone {
                return r % bound;
            }
        }
    }
}

pub fn shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = SplitMix64::new(seed);
    for i in (1..items.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(&mut idx, seed);
    idx
}

/// Mix an auxiliary counter (e.g. an epoch index) into a base seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = SplitMix64::new(seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    rng.next_u64()
}
