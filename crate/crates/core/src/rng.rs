//! Deterministic seed derivation.
//!
//! Every randomized task derives its own generator from a root seed plus a
//! stream tag and an index, so results do not depend on how work is split
//! across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type Rng = ChaCha12Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a root seed with a stream tag and task index into a child seed.
pub fn derive_seed(root: u64, stream: &str, index: u64) -> u64 {
    let mut h = splitmix64(root);
    for b in stream.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h ^ splitmix64(index))
}

pub fn rng_for(root: u64, stream: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(root, stream, index))
}
