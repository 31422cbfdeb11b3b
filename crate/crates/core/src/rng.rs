//! Deterministic per-task random streams.
//!
//! Every independent unit of work (a Monte Carlo replicate, a simulated
//! dataset, a CV shuffle) draws from its own ChaCha stream whose seed is a
//! pure function of the master seed, a stream label and the task index. The
//! result of a parallel run is therefore independent of the worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for task `index` of stream `stream` under `master`.
pub fn task_seed(master: u64, stream: &str, index: u64) -> u64 {
    let mut h = splitmix64(master);
    for b in stream.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h ^ splitmix64(index))
}

pub fn task_rng(master: u64, stream: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(task_seed(master, stream, index))
}
