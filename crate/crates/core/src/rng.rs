//! Counter-based seeding: each replication gets a generator keyed by
//! `(root, stream, index)` so that outcomes do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with a replication index.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    splitmix64(splitmix64(root) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn rng_for(root: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(root, index))
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
