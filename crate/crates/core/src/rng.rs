//! Seeded random streams and small hashing utilities.
//!
//! Every source of randomness in a run is a ChaCha8 stream derived from the
//! run's master seed plus a fixed stream id. Streams are independent, so
//! consuming one (e.g. Fisher sampling) never perturbs another (e.g. action
//! sampling), and each stream's exact position can be saved into and restored
//! from a checkpoint.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fixed stream ids. Per-env streams add the env index to a base.
pub mod stream {
    pub const PARAM_INIT: u64 = 1;
    pub const RESET_SEEDS: u64 = 2;
    pub const FISHER: u64 = 3;
    pub const MAP_CHOICE: u64 = 4;
    pub const POLICY_BASE: u64 = 0x100;
    pub const EVAL_BASE: u64 = 0x1_0000;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Expand a u64 seed into ChaCha key material.
pub fn expand_seed(seed: u64) -> [u8; 32] {
    let mut state = seed;
    let mut out = [0u8; 32];
    for chunk in out.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    out
}

/// A fresh stream for (master seed, stream id).
pub fn stream_rng(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(expand_seed(seed));
    rng.set_stream(stream_id);
    rng
}

/// A stream seeded directly from a u64 (used where the seed itself was drawn
/// from another stream).
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(expand_seed(seed))
}

/// Uniform f64 in [0, 1) with 53 bits of precision.
pub fn next_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Unbiased uniform integer in [0, n) (Lemire's method).
pub fn uniform_usize(rng: &mut ChaCha8Rng, n: usize) -> usize {
    assert!(n > 0, "uniform_usize: empty range");
    let n = n as u64;
    loop {
        let x = rng.next_u64();
        let m = (x as u128) * (n as u128);
        let low = m as u64;
        if low >= n {
            return (m >> 64) as usize;
        }
        // reject the biased low region
        let threshold = n.wrapping_neg() % n;
        if low >= threshold {
            return (m >> 64) as usize;
        }
    }
}

/// Exact position of a ChaCha stream, checkpointable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

pub fn save_rng(rng: &ChaCha8Rng) -> RngState {
    RngState {
        seed: rng.get_seed(),
        stream: rng.get_stream(),
        word_pos: rng.get_word_pos(),
    }
}

pub fn load_rng(state: &RngState) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(state.seed);
    rng.set_stream(state.stream);
    rng.set_word_pos(state.word_pos);
    rng
}

/// FNV-1a over a byte stream.
pub fn fnv1a64(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100_0000_01b3);
    }
    hash
}

/// Order-sensitive hash of a parameter vector (exact f64 bits).
pub fn hash_f64s(data: &[f64]) -> u64 {
    fnv1a64(data.iter().flat_map(|x| x.to_bits().to_le_bytes()))
}
