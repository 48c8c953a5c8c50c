//! Seed expansion: one top-level seed, one independent stream per sub-task.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for sub-task `stream` of a run seeded with `seed`.
///
/// Streams are independent ChaCha streams keyed by the same seed, so the
/// numbers drawn for one task never depend on how many other tasks ran.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
