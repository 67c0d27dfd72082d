//! Seeded random streams.
//!
//! Every consumer of randomness (crops, grids, initialization, synthetic data,
//! shuffling) derives its own stream from the run seed plus a purpose tag and
//! indices, so streams are independent of scheduling and of each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags for [`stream`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Synth = 2,
    Shuffle = 3,
    Crop = 4,
    Grid = 5,
    Temporal = 6,
    Gradcheck = 7,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic generator for `(seed, purpose, indices)`.
pub fn stream(seed: u64, purpose: Purpose, indices: &[u64]) -> Rng {
    let mut h = splitmix(seed ^ splitmix(purpose as u64));
    for &i in indices {
        h = splitmix(h ^ splitmix(i.wrapping_add(0x1234_5678)));
    }
    Rng::seed_from_u64(h)
}
