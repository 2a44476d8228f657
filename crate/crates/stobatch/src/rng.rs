//! Purpose-tagged deterministic randomness.
//!
//! Every random draw in a run flows from one top-level seed through
//! `sub_seed(tag, seed, indices)`, so initialization, noise, batch shuffles,
//! attack crafting, and Monte-Carlo streams never share an underlying stream.
//! The mixer is a fixed splitmix64 chain — stable across platforms and
//! compiler versions, unlike the std hasher.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a purpose tag, the top-level seed, and any
/// stream-identifying indices (step, trainer slot, example id, ...).
pub fn sub_seed(tag: &str, seed: u64, indices: &[u64]) -> u64 {
    let mut state = seed ^ 0x5bf0_3635_dee9_09b5;
    for &b in tag.as_bytes() {
        state ^= u64::from(b);
        splitmix64(&mut state);
    }
    for &ix in indices {
        state ^= ix;
        splitmix64(&mut state);
    }
    splitmix64(&mut state)
}

/// A counter-based generator for the given purpose.
pub fn rng_for(tag: &str, seed: u64, indices: &[u64]) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(sub_seed(tag, seed, indices))
}
