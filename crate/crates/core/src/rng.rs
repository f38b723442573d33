//! Named, seeded random streams.
//!
//! Every consumer of randomness draws from its own `(seed, stream)` pair so
//! that changing one source (say, the masking probabilities) never perturbs
//! weight initialisation or data order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub mod streams {
    pub const SYNTH_PROTOTYPES: u64 = 1;
    pub const SYNTH_TRAIN: u64 = 2;
    pub const SYNTH_VAL: u64 = 3;
    pub const SYNTH_TEST: u64 = 4;
    pub const INIT: u64 = 10;
    pub const DROPOUT: u64 = 11;
    pub const DATA_ORDER: u64 = 12;
    pub const MASKING: u64 = 13;
    pub const NEGATIVES: u64 = 14;
}

pub fn stream(seed: u64, stream_id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Sub-stream for parallel worker `worker` of a given named stream.
pub fn worker_stream(seed: u64, stream_id: u64, worker: u64) -> StreamRng {
    stream(seed, (stream_id << 32) | (worker + 1))
}
