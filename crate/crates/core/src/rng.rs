//! Seeded random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from the run
//! seed, a purpose tag and an index, so per-question work can be reordered or
//! parallelised without changing any draw.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as StreamRng;

/// Purpose tags for derived streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Dataset = 1,
    Init = 2,
    Votes = 3,
    Rollouts = 4,
    Shuffle = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for `(seed, purpose, epoch)` with ChaCha stream number `index`.
pub fn stream(seed: u64, purpose: Purpose, epoch: u64, index: u64) -> StreamRng {
    let key = splitmix64(splitmix64(seed ^ splitmix64(purpose as u64)) ^ epoch);
    let mut rng = StreamRng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
