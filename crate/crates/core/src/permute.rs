//! Seeded invertible index permutations with constant state.
//!
//! Each round permutes `{0..n}` with a 4-round Feistel network over the
//! smallest power-of-two domain covering `n`, cycle-walking any output that
//! lands outside `{0..n}`. The halves may differ in width by one bit; the
//! widths swap every round, so after an even number of rounds they are back
//! in place. Nothing proportional to `n` is stored.

use crate::error::{Error, Result};

const FEISTEL_ROUNDS: usize = 4;

/// splitmix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

/// Permutation of `{0..n}` for one CASCADE round, derived from the shared
/// session seed and the round number.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PermutationKey {
    session_seed: u128,
    round: u32,
    n: usize,
    identity: bool,
    left_bits: u32,
    right_bits: u32,
    keys: [u64; FEISTEL_ROUNDS],
}

impl PermutationKey {
    /// Keyed permutation for `round` (≥ 1) over `n` indices.
    pub fn new(session_seed: u128, round: u32, n: usize) -> Result<Self> {
        Self::build(session_seed, round, n, false)
    }

    /// The identity on `{0..n}`, used for round 1 by default.
    pub fn identity(session_seed: u128, round: u32, n: usize) -> Result<Self> {
        Self::build(session_seed, round, n, true)
    }

    /// Key for `round`, using the identity for round 1 when `identity_first_round` is set.
    pub fn for_round(
        session_seed: u128,
        round: u32,
        n: usize,
        identity_first_round: bool,
    ) -> Result<Self> {
        Self::build(session_seed, round, n, identity_first_round && round == 1)
    }

    fn build(session_seed: u128, round: u32, n: usize, identity: bool) -> Result<Self> {
        if round == 0 {
            return Err(Error::contract("rounds are numbered from 1"));
        }
        if n as u128 > (1u128 << 62) {
            return Err(Error::contract("permutation domain too large"));
        }
        let bits = if n <= 1 {
            0
        } else {
            usize::BITS - (n - 1).leading_zeros()
        };
        let left_bits = bits / 2;
        let right_bits = bits - left_bits;
        let base = mix64(session_seed as u64) ^ mix64((session_seed >> 64) as u64 ^ 0x5851_F42D);
        let mut keys = [0u64; FEISTEL_ROUNDS];
        for (level, key) in keys.iter_mut().enumerate() {
            *key = mix64(base ^ mix64(((round as u64) << 8) | level as u64));
        }
        Ok(PermutationKey {
            session_seed,
            round,
            n,
            identity,
            left_bits,
            right_bits,
            keys,
        })
    }

    pub fn session_seed(&self) -> u128 {
        self.session_seed
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn domain(&self) -> usize {
        self.n
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    /// `π(i)`.
    pub fn forward(&self, i: usize) -> Result<usize> {
        self.check(i)?;
        Ok(self.map(i))
    }

    /// `π⁻¹(j)`.
    pub fn inverse(&self, j: usize) -> Result<usize> {
        self.check(j)?;
        Ok(self.unmap(j))
    }

    #[inline]
    pub(crate) fn map(&self, i: usize) -> usize {
        if self.identity || self.n <= 1 {
            return i;
        }
        let mut x = i as u64;
        loop {
            x = self.encrypt(x);
            if (x as usize) < self.n {
                return x as usize;
            }
        }
    }

    #[inline]
    pub(crate) fn unmap(&self, j: usize) -> usize {
        if self.identity || self.n <= 1 {
            return j;
        }
        let mut y = j as u64;
        loop {
            y = self.decrypt(y);
            if (y as usize) < self.n {
                return y as usize;
            }
        }
    }

    #[inline]
    fn round_fn(&self, level: usize, half: u64) -> u64 {
        mix64(half ^ self.keys[level])
    }

    fn encrypt(&self, x: u64) -> u64 {
        let (mut wl, mut wr) = (self.left_bits, self.right_bits);
        let mut l = x >> wr;
        let mut r = x & mask(wr);
        for level in 0..FEISTEL_ROUNDS {
            let f = self.round_fn(level, r) & mask(wl);
            let new_r = l ^ f;
            l = r;
            r = new_r;
            std::mem::swap(&mut wl, &mut wr);
        }
        (l << wr) | r
    }

    fn decrypt(&self, y: u64) -> u64 {
        // After an even number of rounds the widths are back to (left, right).
        let (mut wl, mut wr) = (self.left_bits, self.right_bits);
        let mut l = y >> wr;
        let mut r = y & mask(wr);
        for level in (0..FEISTEL_ROUNDS).rev() {
            // (l, r) = (r_prev, l_prev ^ F(r_prev)) with widths swapped.
            let prev_r = l;
            let prev_l = r ^ (self.round_fn(level, prev_r) & mask(wr));
            l = prev_l;
            r = prev_r;
            std::mem::swap(&mut wl, &mut wr);
        }
        (l << wr) | r
    }

    fn check(&self, i: usize) -> Result<()> {
        if i >= self.n {
            return Err(Error::OutOfRange {
                index: i,
                len: self.n,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const SEED: u128 = 0x0123_4567_89AB_CDEF_FEDC_BA98_7654_3210;

    /// Seen-bitmap sweep: every output is in range and hit exactly once.
    fn assert_bijective(key: &PermutationKey) {
        let n = key.domain();
        let mut seen = vec![false; n];
        for i in 0..n {
            let j = key.forward(i).unwrap();
            assert!(!seen[j], "collision at {j} for n={n}");
            seen[j] = true;
        }
    }

    #[test]
    fn identity_round_one() {
        let key = PermutationKey::for_round(SEED, 1, 100, true).unwrap();
        assert!(key.is_identity());
        for i in 0..100 {
            assert_eq!(key.forward(i).unwrap(), i);
            assert_eq!(key.inverse(i).unwrap(), i);
        }
        assert!(!PermutationKey::for_round(SEED, 2, 100, true).unwrap().is_identity());
        assert!(!PermutationKey::for_round(SEED, 1, 100, false).unwrap().is_identity());
    }

    #[test]
    fn n16_is_a_permutation() {
        let key = PermutationKey::new(SEED, 2, 16).unwrap();
        let mut image: Vec<usize> = (0..16).map(|i| key.forward(i).unwrap()).collect();
        assert_ne!(image, (0..16).collect::<Vec<_>>());
        image.sort_unstable();
        assert_eq!(image, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn exhaustive_inverse_small_domains() {
        for n in (1..=4096).step_by(97).chain([2, 3, 4, 5, 4095, 4096]) {
            for round in 1..=3 {
                let key = PermutationKey::new(SEED ^ n as u128, round, n).unwrap();
                for i in 0..n {
                    assert_eq!(key.inverse(key.forward(i).unwrap()).unwrap(), i);
                }
            }
        }
    }

    #[test]
    fn bijective_on_listed_domains() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [10usize, 1000, 1 << 20, 1_000_000] {
            let key = PermutationKey::new(rng.random(), 2, n).unwrap();
            assert_bijective(&key);
        }
    }

    #[test]
    fn sampled_round_trip_large_domain() {
        let key = PermutationKey::new(SEED, 3, 1_000_000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let i = rng.random_range(0..1_000_000);
            assert_eq!(key.inverse(key.forward(i).unwrap()).unwrap(), i);
        }
    }

    #[test]
    fn deterministic_and_round_dependent() {
        let a = PermutationKey::new(SEED, 2, 5000).unwrap();
        let b = PermutationKey::new(SEED, 2, 5000).unwrap();
        let c = PermutationKey::new(SEED, 3, 5000).unwrap();
        let d = PermutationKey::new(SEED + 1, 2, 5000).unwrap();
        let img = |k: &PermutationKey| (0..5000).map(|i| k.map(i)).collect::<Vec<_>>();
        assert_eq!(img(&a), img(&b));
        assert_ne!(img(&a), img(&c));
        assert_ne!(img(&a), img(&d));
    }

    #[test]
    fn range_errors() {
        let key = PermutationKey::new(SEED, 2, 10).unwrap();
        assert!(matches!(key.forward(10), Err(Error::OutOfRange { .. })));
        assert!(matches!(key.inverse(11), Err(Error::OutOfRange { .. })));
        assert!(PermutationKey::new(SEED, 0, 10).is_err());
    }

    #[test]
    fn constant_state() {
        assert!(std::mem::size_of::<PermutationKey>() <= 96);
    }

    #[test]
    fn disperses_neighbours() {
        // Adjacent indices should rarely stay within one 64-bit block of each other.
        let n = 1 << 16;
        let key = PermutationKey::new(SEED, 2, n).unwrap();
        let close = (0..n - 1)
            .filter(|&i| key.map(i).abs_diff(key.map(i + 1)) < 64)
            .count();
        assert!(close < n / 100, "{close} adjacent pairs stayed close");
    }
}
