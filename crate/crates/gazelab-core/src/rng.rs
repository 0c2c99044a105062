//! The single named PRNG used everywhere randomness is needed.
//!
//! xoshiro256** with its state initialized from a 64-bit seed through
//! splitmix64, exactly as in the reference implementations by Blackman
//! and Vigna. Pure integer arithmetic, so streams are bit-identical
//! across platforms. Every stochastic component in the crate (dataset
//! synthesis, parameter init, batch sampling, bootstrap resampling)
//! draws from an instance of this generator and nothing else.

/// xoshiro256** seeded via splitmix64.
#[derive(Clone, Debug)]
pub struct Rng64 {
    s: [u64; 4],
}

impl Rng64 {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let mut next_sm = || {
            sm = sm.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = sm;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^ (z >> 31)
        };
        Rng64 {
            s: [next_sm(), next_sm(), next_sm(), next_sm()],
        }
    }

    /// Derive an independent child generator. Used to give each
    /// (pair, condition) job, identity, or frame its own stream while
    /// keeping everything a pure function of the root seed.
    pub fn child(&self, stream: u64) -> Self {
        // Mix the stream tag through splitmix so children with nearby
        // tags do not share state prefixes.
        let mut base = Rng64::new(stream ^ 0xa076_1d64_78bd_642f);
        Rng64::new(self.s[0] ^ base.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1]
            .wrapping_mul(5)
            .rotate_left(7)
            .wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). Unbiased via rejection.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Symmetric uniform in [-half, half].
    pub fn jitter(&mut self, half: f64) -> f64 {
        self.range_f64(-half, half)
    }
}
