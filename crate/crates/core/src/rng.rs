//! Counter-based pseudo-random numbers.
//!
//! The `i`-th draw of a stream is a pure function of `(seed, i)`: the seed is
//! hashed into a key, the counter is spread with the golden-ratio increment,
//! and the sum goes through the SplitMix64 finalizer. Output therefore does not
//! depend on platform, thread count or the order in which draws are taken.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix(seed ^ 0x6A09_E667_F3BC_C909),
        }
    }

    pub fn u64_at(&self, counter: u64) -> u64 {
        mix(self
            .key
            .wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform_at(&self, counter: u64) -> f64 {
        ((self.u64_at(counter) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box–Muller on draws `2i` and `2i + 1`.
    pub fn gaussian_at(&self, i: u64) -> f64 {
        let u1 = self.uniform_at(2 * i);
        let u2 = self.uniform_at(2 * i + 1);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
