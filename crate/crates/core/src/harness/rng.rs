//! Counter-style substreams: every random draw is keyed by
//! `(seed, trial, node, step, purpose)`, so results do not depend on thread
//! scheduling or on the order in which trials run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    InitialEstimate = 1,
    ProcessNoise = 2,
    MeasurementNoise = 3,
    Uncertainty = 4,
}

/// Node key for draws that cover the whole network.
pub const ALL_NODES: u64 = u64::MAX;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn substream(seed: u64, trial: u64, node: u64, step: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for v in [trial, node, step, purpose as u64] {
        h = splitmix(h ^ v);
    }
    ChaCha8Rng::seed_from_u64(h)
}
