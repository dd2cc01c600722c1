//! Counter-based random streams keyed by (seed, purpose, index).
//!
//! Every consumer derives its own ChaCha key from the run seed and a purpose
//! tag, then selects a stream (layer, trajectory) and a word position (site).
//! Draws therefore never depend on how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub enum Purpose {
    Filling,
    PhasePoints,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Filling => 0x6669_6c6c_696e_6721,
            Purpose::PhasePoints => 0x7068_6173_6570_7473,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for `(seed, purpose, key_index)` positioned at the start of `stream`.
pub fn keyed_stream(seed: u64, purpose: Purpose, key_index: u64, stream: u64) -> ChaCha8Rng {
    let mut state = seed ^ purpose.tag();
    splitmix64(&mut state);
    state ^= key_index.wrapping_mul(0xd1b5_4a32_d192_ed03);
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Uniform draw in [0, 1) located at `word` of the stream, independent of
/// any other position.
pub fn uniform_at(rng: &mut ChaCha8Rng, word: u64) -> f64 {
    use rand::RngCore;
    rng.set_word_pos(2 * word as u128);
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
