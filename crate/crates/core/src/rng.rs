//! Seed expansion: one run seed, one independent stream per consumer.
//!
//! Each consumer gets a ChaCha stream selected by its id, so enabling or
//! disabling one consumer never shifts the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random-number consumers with reserved stream ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    SyntheticData = 1,
    Init = 2,
    Dropout = 3,
    Shuffle = 4,
}

pub fn stream(seed: u64, consumer: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(consumer as u64);
    rng
}
