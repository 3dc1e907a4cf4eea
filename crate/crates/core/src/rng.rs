//! Counter-based random streams.
//!
//! Every episode gets its own ChaCha key derived from `(seed, rep)`; within
//! an episode, independent streams are addressed by `(team, dm)`. Draws
//! therefore never depend on how episodes are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for episode `rep` of an experiment seeded with `seed`.
pub fn episode_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&rep.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Stream `stream` of episode `rep`.
pub fn stream_rng(seed: u64, rep: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = episode_rng(seed, rep);
    rng.set_stream(stream);
    rng
}

/// Stream index of one DM; stream 0 is reserved for episode-level draws
/// (world state, common randomness).
pub fn dm_stream(team: usize, dm: usize) -> u64 {
    1 + ((team as u64) << 40) + dm as u64
}
