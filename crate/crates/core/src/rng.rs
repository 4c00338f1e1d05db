//! Deterministic random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator keyed by `(seed, stream)`.
///
/// Each trial, client or worker item draws from its own stream so results do
/// not depend on how work is split across threads.
pub fn keyed_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
