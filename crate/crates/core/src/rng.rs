//! Named deterministic random streams.
//!
//! Every experiment derives its randomness from one master seed split into
//! independent named streams, so that toggling one consumer (say, drop-mask
//! sampling) never perturbs another (say, data order).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Consumers of randomness within a single run. Each gets its own stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamId {
    /// Data generation and shuffling.
    Data,
    /// Parameter initialization.
    Init,
    /// Random complement cells of drop masks.
    Mask,
    /// Replay-buffer update policy.
    Buffer,
    /// Replay-buffer retrieval.
    Retrieval,
}

impl StreamId {
    fn index(self) -> u64 {
        match self {
            StreamId::Data => 1,
            StreamId::Init => 2,
            StreamId::Mask => 3,
            StreamId::Buffer => 4,
            StreamId::Retrieval => 5,
        }
    }
}

/// Splits one master seed into independent named streams.
#[derive(Debug, Clone, Copy)]
pub struct SeedSplit {
    master: u64,
}

impl SeedSplit {
    pub fn new(master: u64) -> Self {
        SeedSplit { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// ChaCha generator for one named stream.
    pub fn rng(&self, id: StreamId) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(id.index());
        rng
    }

    /// A derived 64-bit seed for a subsystem that seeds itself (for example
    /// the stream generator, whose output is a pure function of its config).
    pub fn derived_seed(&self, id: StreamId) -> u64 {
        splitmix64(self.master ^ id.index().wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }
}

/// SplitMix64 finalizer; decorrelates nearby master seeds.
pub fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
