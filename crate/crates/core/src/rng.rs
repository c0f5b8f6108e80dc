//! Deterministic, splittable random streams.
//!
//! Every stochastic operation in the crate takes an explicit RNG. Streams for
//! simulation actors are derived from a master seed plus a tuple of tags
//! (purpose, client id, round index), so results never depend on thread
//! scheduling or on the order in which clients are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used throughout the simulator.
pub type SimRng = ChaCha8Rng;

/// Stream purposes. Distinct tags keep, e.g., client sampling and local
/// training from ever sharing a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Sampling = 1,
    LocalTraining = 2,
    Compression = 3,
    ModelInit = 4,
    Data = 5,
    Partition = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A fresh generator seeded only from `seed`.
pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream keyed by `(seed, purpose, a, b)`.
///
/// The ChaCha key comes from `seed`; the 64-bit stream id is a hash of the
/// remaining tags.
pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = splitmix64(splitmix64(splitmix64(purpose as u64) ^ a) ^ b.rotate_left(32));
    rng.set_stream(id);
    rng
}

/// Stream for one client in one round.
pub fn client_stream(seed: u64, purpose: Purpose, client: usize, round: usize) -> SimRng {
    stream(seed, purpose, client as u64, round as u64)
}
