//! Counter-based random substreams.
//!
//! Every random draw in a run comes from a ChaCha stream keyed on
//! `(master seed, step, domain)` with the particle index selecting the stream
//! number. A particle's randomness therefore depends only on its coordinates in
//! the run, never on which thread evaluated it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Separates the purposes a stream can serve so that, e.g., the resampling
/// draws at step `k` never overlap the proposal draws at step `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Init = 1,
    Propose = 2,
    Resample = 3,
    FinalDraw = 4,
    ExactSample = 5,
    Problem = 6,
    Projection = 7,
    Aux = 8,
}

/// The stream for `(seed, step, domain, index)`.
pub fn substream(seed: u64, step: u64, domain: Domain, index: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&step.to_le_bytes());
    key[16..24].copy_from_slice(&(domain as u64).to_le_bytes());
    key[24..].copy_from_slice(b"ddsmc\0v1");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Seed of the `index`-th independent run under a master seed (SplitMix64
/// finalizer over the pair).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
