//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a stream addressed by
//! `(seed, index)`. The stream for a given pair does not depend on how work is
//! split across threads, which keeps batch results independent of the number
//! of workers.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Returns the generator for stream `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
