//! Deterministic pseudo-random streams.
//!
//! Every random draw in the crate goes through [`SplitMix64`] so that runs are
//! reproducible bit-for-bit from a 64-bit seed, and so that other
//! implementations can regenerate identical streams. The update rule is:
//!
//! ```text
//! state  = state + 0x9E3779B97F4A7C15            (wrapping)
//! z      = state
//! z      = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9  (wrapping)
//! z      = (z ^ (z >> 27)) * 0x94D049BB133111EB  (wrapping)
//! output = z ^ (z >> 31)
//! ```
//!
//! Derived quantities:
//!
//! * `uniform()` = `(output >> 11) * 2^-53`, in `[0, 1)`.
//! * `normal()` consumes two uniforms `a`, `b` and returns
//!   `sqrt(-2 ln(1 - a)) * cos(2 pi b)` (Box-Muller, cosine branch only).
//! * `stream(seed, i)` seeds an independent generator with
//!   `mix(seed ^ ((i + 1) * 0xD1B54A32D192ED03))`, where `mix` is the output
//!   function above applied to a single value. Scenes use stream `i` for frame
//!   `i`; parameter initialization uses the root generator.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const STREAM_GAMMA: u64 = 0xD1B5_4A32_D192_ED03;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Independent sub-stream `index` of `seed`.
    pub fn stream(seed: u64, index: u64) -> Self {
        Self::new(mix(seed ^ index.wrapping_add(1).wrapping_mul(STREAM_GAMMA)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let a = self.uniform();
        let b = self.uniform();
        (-2.0 * (1.0 - a).ln()).sqrt() * (std::f64::consts::TAU * b).cos()
    }
}
