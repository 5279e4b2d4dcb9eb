//! Deterministic RNG substream derivation.
//!
//! Every stochastic component draws from a ChaCha8 stream whose key is
//! derived from the run seed plus a purpose tag and index path, so results
//! are reproducible and independent of evaluation order or parallelism.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_INIT: u64 = 1;
pub const STREAM_DROPOUT: u64 = 2;
pub const STREAM_SCENARIO: u64 = 3;
pub const STREAM_SYNTH: u64 = 4;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent ChaCha8 stream from `(seed, path...)`.
///
/// Each path element is absorbed through a full splitmix64 avalanche so that
/// reordered or shifted paths land in unrelated streams.
pub fn substream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = seed ^ 0x6A09_E667_F3BC_C908;
    state = splitmix64(&mut state);
    for &p in path {
        state ^= p.rotate_left(17);
        state = splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn substreams_are_deterministic_and_distinct() {
        let mut a = substream(7, &[STREAM_SCENARIO, 0, 1]);
        let mut b = substream(7, &[STREAM_SCENARIO, 0, 1]);
        let mut c = substream(7, &[STREAM_SCENARIO, 1, 0]);
        let xa: u64 = a.random();
        let xb: u64 = b.random();
        let xc: u64 = c.random();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn seed_changes_stream() {
        let mut a = substream(1, &[STREAM_INIT]);
        let mut b = substream(2, &[STREAM_INIT]);
        assert_ne!(a.random::<u64>(), b.random::<u64>());
    }
}
