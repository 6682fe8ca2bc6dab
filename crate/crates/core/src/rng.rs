//! Seeded random streams.
//!
//! Every random draw in the engine comes from a ChaCha8 generator keyed by a
//! run seed plus a stream id, so independent consumers (one class's
//! generator fit, the dataset shuffle, tower construction) never share a
//! sequence and results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

/// Stream namespaces. The low 32 bits are free for an index (class id, task).
pub mod stream {
    pub const GENERATOR_FIT: u64 = 1 << 32;
    pub const GENERATOR_SAMPLE: u64 = 2 << 32;
    pub const DATASET_SHUFFLE: u64 = 3 << 32;
    pub const PROMPT_INIT: u64 = 4 << 32;
    pub const ALIGN_BATCHES: u64 = 5 << 32;
    pub const TOWER: u64 = 6 << 32;
    pub const BENCHMARK: u64 = 7 << 32;
    pub const TASK_ORDER: u64 = 8 << 32;
    pub const MLP_INIT: u64 = 9 << 32;
}

pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal_vec(rng: &mut Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| std * standard_normal(rng))
        .collect()
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

/// Mixes `salt` into `seed` (splitmix64 finalizer), for per-task seeds.
pub fn derive(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
