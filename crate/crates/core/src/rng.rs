//! Seed derivation and keyed random sub-streams.
//!
//! A single master seed fans out into independent ChaCha8 streams keyed by
//! purpose and position. Rewards and policy randomness for round `t` and
//! player `p` are read from fixed offsets of a per-round stream, so the value a
//! player sees never depends on the order in which players are visited.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

/// Purpose tag mixed into every derived stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Instance = 1,
    Schedule = 2,
    Reward = 3,
    Policy = 4,
    Run = 5,
    Validation = 6,
}

/// Hashes an ordered list of integers into a 64-bit seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

/// A ChaCha8 stream keyed directly by `(seed, domain, a, b)`.
pub fn keyed_stream(seed: u64, domain: Domain, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Maps 64 random bits to the open interval (0, 1).
#[inline]
pub fn open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Standard normal quantile of `u`, `u` in (0, 1).
#[inline]
pub fn std_normal_quantile(u: f64) -> f64 {
    // Normal::standard() is a const constructor; inverse_cdf is the accurate erfc^-1 route.
    Normal::standard().inverse_cdf(u)
}

/// Source of per-decision randomness handed to a policy for one `(round, player)`.
///
/// Policies draw arm samples in ascending arm order, then at most one extra
/// uniform for tie-breaking.
pub trait DrawSource {
    fn uniform(&mut self) -> f64;

    fn std_normal(&mut self) -> f64 {
        std_normal_quantile(self.uniform())
    }
}

/// Fixed-width block of raw random words per player, read from one per-round stream.
#[derive(Debug, Clone)]
pub struct RoundBlock {
    words: Vec<u64>,
    width: usize,
}

impl RoundBlock {
    pub fn new(num_players: usize, width: usize) -> Self {
        Self {
            words: vec![0; num_players * width],
            width,
        }
    }

    /// Refills the block from the `(seed, domain, round)` stream.
    pub fn refill(&mut self, seed: u64, domain: Domain, round: u64) {
        let mut rng = keyed_stream(seed, domain, round, 0);
        for w in self.words.iter_mut() {
            *w = rng.next_u64();
        }
    }

    pub fn player(&self, player: usize) -> &[u64] {
        &self.words[player * self.width..(player + 1) * self.width]
    }

    pub fn cursor(&self, player: usize) -> BlockDraws<'_> {
        BlockDraws {
            words: self.player(player),
            next: 0,
        }
    }
}

/// Sequential reader over one player's slice of a [`RoundBlock`].
#[derive(Debug)]
pub struct BlockDraws<'a> {
    words: &'a [u64],
    next: usize,
}

impl DrawSource for BlockDraws<'_> {
    fn uniform(&mut self) -> f64 {
        let w = self.words[self.next];
        self.next += 1;
        open_unit(w)
    }
}

/// Plain sequential stream adapter, used where order independence is not needed.
#[derive(Debug)]
pub struct StreamDraws<R>(pub R);

impl<R: RngCore> DrawSource for StreamDraws<R> {
    fn uniform(&mut self) -> f64 {
        open_unit(self.0.next_u64())
    }
}
