//! Deterministic random streams.
//!
//! Every stochastic component of the engine (exploration noise, replay
//! sampling, augmentation shifts, parameter init, environment resets) draws
//! from its own labelled stream derived from the master seed. Two runs with
//! the same seed therefore consume identical random sequences regardless of
//! how work is interleaved elsewhere, which is what the bit-reproducibility
//! contracts rest on.

/// splitmix64 finalizer; also used to derive stream seeds.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derive the seed for a named sub-stream of `master`.
pub fn stream_seed(master: u64, label: &str, index: u64) -> u64 {
    mix(master ^ fnv1a(label.as_bytes()) ^ index.wrapping_mul(0x9e3779b97f4a7c15))
}

/// Small deterministic generator (splitmix64 sequence).
#[derive(Debug, Clone)]
pub struct DetRng {
    state: u64,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng { state: seed }
    }

    /// Stream labelled `label`/`index` under the master seed.
    pub fn stream(master: u64, label: &str, index: u64) -> Self {
        DetRng::new(stream_seed(master, label, index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        mix(self.state)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform01()
    }

    /// Uniform index in [0, n). n must be nonzero.
    pub fn uniform_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // widening multiply keeps the bias below 2^-64
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller (one draw per call).
    pub fn normal(&mut self) -> f64 {
        // u1 in (0, 1] so the log is finite
        let u1 = 1.0 - self.uniform01();
        let u2 = self.uniform01();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}
