//! Counter-based deterministic RNG.
//!
//! Every random quantity in the workspace (weight init, dataset synthesis,
//! shuffles, benchmark problems) flows through this generator so that a seed
//! fully determines a run. The design is counter-based rather than stateful-
//! stream based: draw `k` is a pure function `mix(seed + (k+1)·φ)`, which
//! makes streams splittable and immune to refactorings that reorder state
//! threading.

use crate::tensor::Element;

/// 2^64 / golden ratio; the SplitMix64 increment.
const PHI: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline(always)]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Splittable counter RNG. `Clone` is cheap and forks the exact stream state.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, counter: 0 }
    }

    /// Derive an independent child stream. Does not advance this stream, so
    /// sibling splits with distinct labels never collide and the parent's
    /// draws are unaffected by how many children were split off.
    pub fn split(&self, label: u64) -> Rng {
        Rng {
            seed: mix(self.seed.wrapping_add(mix(label ^ 0x517C_C1B7_2722_0A95))),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(PHI)))
    }

    /// Uniform on [0, 1), 53-bit resolution.
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64) * (1.0 / 9007199254740992.0)
    }

    /// Uniform on (0, 1]; safe as a `ln` argument.
    fn uniform_open(&mut self) -> f64 {
        (((self.next_u64() >> 11) + 1) as f64) * (1.0 / 9007199254740992.0)
    }

    /// Uniform integer in [0, n). n must be > 0.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal draw (Box-Muller). Consumes exactly two u64 draws, so
    /// counter positions stay predictable.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// `n` standard-normal draws.
    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// `n` standard-normal draws converted to the target precision.
    pub fn normal_elems<S: Element>(&mut self, n: usize) -> Vec<S> {
        (0..n).map(|_| S::from_f64(self.normal())).collect()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}
