//! Loop-nest normalization and canonical scheduling.
//!
//! The pipeline: parse affine loop nests from a small DSL ([`frontend`]),
//! analyze dependences ([`deps`]), normalize via maximal loop fission and
//! stride minimization ([`normalize`]), fingerprint the canonical form
//! ([`canonical`]), and apply fingerprint-keyed optimization recipes
//! ([`recipes`]). A reference interpreter ([`interp`]) is the ground truth
//! for every semantics-preservation claim, and [`variants`] generates random
//! semantically-equivalent inputs for convergence testing.

pub mod canonical;
pub mod deps;
pub mod frontend;
pub mod interp;
pub mod ir;
pub mod normalize;
pub mod recipes;
pub mod variants;

/// FNV-1a 64-bit. Fixed forever as the fingerprint hash of the canonical
/// text format; must stay bit-exact across platforms and implementations.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// SplitMix64 mixer, used for deterministic array initialization and as the
/// variant generator's RNG.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Small deterministic RNG built on [`splitmix64`].
#[derive(Clone, Debug)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        splitmix64(self.state)
    }

    /// Uniform value in `0..n`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn rng_is_deterministic() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..16 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }
}
